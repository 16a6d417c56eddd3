#include "dmslam/priors.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dmslam {

NcvModel ncv_build(double dt, double sigma_v) {
  if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
  if (sigma_v < 0.0) throw std::invalid_argument("negative process noise");
  NcvModel m;
  m.dt = dt;
  m.sigma_v = sigma_v;
  m.F = Mat6::Identity();
  m.F.block<3, 3>(0, 3) = dt * Mat3::Identity();
  m.gain.block<3, 3>(0, 0) = 0.5 * dt * dt * Mat3::Identity();
  m.gain.block<3, 3>(3, 0) = dt * Mat3::Identity();
  m.Q = sigma_v * sigma_v * m.gain * m.gain.transpose();
  return m;
}

Vec6 sample_mt_transition(const Vec6& x, const NcvModel& m, CounterRng& rng) {
  Vec3 a;
  for (int i = 0; i < 3; ++i) a[i] = m.sigma_v * rng.normal();
  return m.F * x + m.gain * a;
}

double mt_transition_logpdf(const Vec6& next, const Vec6& x, const NcvModel& m) {
  const Vec6 d = next - m.F * x;
  // gain = [dt^2/2 I; dt I] has orthogonal-column structure, so the least-squares
  // acceleration is a closed form and the residual tests support membership.
  const double g1 = 0.5 * m.dt * m.dt;
  const double g2 = m.dt;
  const Vec3 a = (g1 * d.head<3>() + g2 * d.tail<3>()) / (g1 * g1 + g2 * g2);
  const Vec6 resid = d - m.gain * a;
  if (resid.norm() > 1e-9 * (1.0 + d.norm())) return -std::numeric_limits<double>::infinity();
  if (m.sigma_v == 0.0) return a.norm() == 0.0 ? std::numeric_limits<double>::infinity()
                                               : -std::numeric_limits<double>::infinity();
  const double var = m.sigma_v * m.sigma_v;
  return -0.5 * a.squaredNorm() / var - 1.5 * std::log(2.0 * kPi * var);
}

double sample_gamma_transition(double prev, double c, CounterRng& rng) {
  if (!(prev > 0.0) || !(c > 0.0)) throw std::invalid_argument("gamma transition needs prev, c > 0");
  return rng.gamma(c, prev / c);
}

cd sample_mu_transition(cd prev, double sigma_mu, CounterRng& rng) {
  if (sigma_mu < 0.0) throw std::invalid_argument("negative sigma_mu");
  if (sigma_mu == 0.0) return prev;
  return prev + rng.complex_normal(sigma_mu * sigma_mu);
}

Vec3 sample_sfv_walk(const Vec3& prev, double sigma_sfv, CounterRng& rng) {
  if (sigma_sfv == 0.0) return prev;
  Vec3 out = prev;
  for (int i = 0; i < 3; ++i) out[i] += sigma_sfv * rng.normal();
  return out;
}

double birth_bernoulli(double mu_b, double vq_fraction) {
  if (mu_b < 0.0) throw std::invalid_argument("negative birth mean");
  const double m = mu_b * vq_fraction;
  return m / (1.0 + m);
}

std::pair<double, double> pr_transition(double prev_prob, double ps_pr, double pr_rev) {
  const double z1 = ps_pr * prev_prob + pr_rev * (1.0 - prev_prob);
  return {z1, 1.0 - z1};
}

PfKernelMass pf_transition_kernel(const std::vector<double>& prev_weights, double ps) {
  PfKernelMass out;
  out.survival.reserve(prev_weights.size());
  double total = 0.0;
  for (double w : prev_weights) {
    out.survival.push_back(ps * w);
    total += ps * w;
  }
  out.dummy = 1.0 - total;
  return out;
}

Vec3 Box3::sample(CounterRng& rng) const {
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = rng.uniform(lo[i], hi[i]);
  return p;
}

cd sample_disc(double radius, CounterRng& rng) {
  const double r = radius * std::sqrt(rng.uniform());
  const double a = 2.0 * kPi * rng.uniform();
  return {r * std::cos(a), r * std::sin(a)};
}

}  // namespace dmslam
