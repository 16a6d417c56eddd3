#pragma once

#include <utility>
#include <vector>

#include "dmslam/rng.hpp"
#include "dmslam/types.hpp"

namespace dmslam {

struct NcvModel {
  double dt = 1.0;
  double sigma_v = 0.0;
  Mat6 F = Mat6::Identity();
  Mat6 Q = Mat6::Zero();
  Eigen::Matrix<double, 6, 3> gain = Eigen::Matrix<double, 6, 3>::Zero();
};

NcvModel ncv_build(double dt, double sigma_v);

Vec6 sample_mt_transition(const Vec6& x, const NcvModel& m, CounterRng& rng);

// The NCV kernel is supported on the 3-D affine set F x + range(gain). The density is
// taken with respect to the acceleration coordinates; off-support points give -inf.
double mt_transition_logpdf(const Vec6& next, const Vec6& x, const NcvModel& m);

// Gamma(shape c, scale prev/c): mean prev, variance prev^2 / c.
double sample_gamma_transition(double prev, double c, CounterRng& rng);

cd sample_mu_transition(cd prev, double sigma_mu, CounterRng& rng);

Vec3 sample_sfv_walk(const Vec3& prev, double sigma_sfv, CounterRng& rng);

// Bernoulli approximation of a Poisson birth with mean mu_b * vq_fraction.
double birth_bernoulli(double mu_b, double vq_fraction = 1.0);

struct ExistenceParams {
  double ps = 0.8;
  double ps_pr = 0.9;
  double pr_rev = 0.1;
  double pb_pr = 0.9;
  double mu_b = 0.5;
};

// (zeta(1), zeta(0)) from the previous PPR posterior b.
std::pair<double, double> pr_transition(double prev_prob, double ps_pr, double pr_rev);

// Legacy PF prediction: survival branch weights p_s * w; the remainder is the dummy mass.
struct PfKernelMass {
  std::vector<double> survival;
  double dummy = 1.0;
};
PfKernelMass pf_transition_kernel(const std::vector<double>& prev_weights, double ps);

// Axis-aligned box.
struct Box3 {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  double volume() const { return (hi - lo).prod(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 sample(CounterRng& rng) const;
};

// Uniform dummy density over ROI x [0, gamma_max] x {|mu| <= mu_max}.
struct DummyPdf {
  Box3 roi;
  double gamma_max = 5.0;
  double mu_max = 1e-3;
  double volume() const { return roi.volume() * gamma_max * kPi * mu_max * mu_max; }
  double density() const { return 1.0 / volume(); }
};

cd sample_disc(double radius, CounterRng& rng);

}  // namespace dmslam
