#pragma once

#include <vector>

#include "dmslam/types.hpp"

namespace dmslam {

// Dense moment-matching route. Every message is the single Gaussian whose first and second
// moments equal those of the exact particle mixture, with no low-rank closure. Cost is
// O(P_x P_f Nz^2) per message, so it serves as the reference route for small instances.

struct GaussMoments {
  CVec mean;
  CMat cov;
};

struct DenseFeature {
  VecX w_alpha;  // PF particle weights; their sum is the prior existence mass
  VecX gamma;
  CVec mu;
  double zeta = 1.0;  // PPR prior zeta(1) at this PA
};

// One PA. steer[s] is (Nz x (Px * Pf)) with column px * Pf + pf = psi(x^px, phi_s^pf).
struct DenseProblem {
  CVec z;
  VecX w_beta;  // MT particle weights, sum 1
  VecX eta;     // noise particles
  VecX w_xi;    // noise weights, sum 1
  std::vector<DenseFeature> features;
  std::vector<CMat> steer;
  bool zero_mean = false;

  int nz() const { return static_cast<int>(z.size()); }
  int px_count() const { return static_cast<int>(w_beta.size()); }
  int pf_count(int s) const { return static_cast<int>(features[s].w_alpha.size()); }
  double eta_mean() const { return w_xi.dot(eta); }
};

GaussMoments iota_moments(const DenseProblem& pb, int px);
GaussMoments nu_moments(const DenseProblem& pb, double eta);
// r=false ignores pf.
GaussMoments kappa_moments(const DenseProblem& pb, int s, int pf, bool r);
GaussMoments omega_moments(const DenseProblem& pb, int s, bool r);

double log_cn_dense(const CVec& z, const GaussMoments& g);

// Log-domain message values for one PA.
struct DenseMessages {
  VecX iota;                        // per MT particle
  VecX nu;                          // per noise particle
  std::vector<VecX> kappa1;         // [s][pf]
  std::vector<double> kappa0;       // [s]
  std::vector<double> omega1;       // [s]
  std::vector<double> omega0;       // [s]
};

DenseMessages dense_messages(const DenseProblem& pb);

}  // namespace dmslam
