#pragma once

#include <vector>

#include "dmslam/channel.hpp"
#include "dmslam/engine.hpp"

namespace dmslam {

// Bounds use the unit-modulus response b(tau) kron a(theta, phi) without the carrier term;
// path loss lives in the moduli and the carrier phase in the per-PA phases.

enum class PhaseMode { coherent, noncoherent };

struct ResponseDerivatives {
  CVec u;        // b kron a
  CVec d_theta;
  CVec d_phi;
  CVec d_tau;
  CVec a_y;      // horizontal factor, length ny
  CVec a_z;      // vertical factor, length nz
  CVec d_ay_theta;
  CVec d_ay_phi;
  CVec d_az_theta;
  CVec d_az_phi;  // identically zero
};

// Throws DegenerateRay at the pole (sin theta = 0), where azimuth is undefined.
ResponseDerivatives response_derivatives(double tau, double theta, double phi, const RfParams& rf,
                                         const UraGeometry& geom);

// Local parameters of one PA, component 0 is the LOS. Local ordering of the information
// matrix is [theta(Kt), phi(Kt), tau(Kt), phase(Kt), modulus(Kt), eta].
struct ChannelParams {
  VecX elevation;
  VecX azimuth;
  VecX delay;
  VecX phase;
  VecX modulus;
  double eta = 1.0;
  std::vector<bool> visible;  // empty means every component is visible

  int components() const { return static_cast<int>(delay.size()); }
  int dim() const { return 5 * components() + 1; }
  bool is_visible(int k) const { return visible.empty() || visible[k]; }
};

// Noise-free mean sum_k a_k exp(j phase_k) u_k of the local model.
CVec channel_mean(const ChannelParams& cp, const RfParams& rf, const UraGeometry& geom);

// (2/eta) Re(D^H D) over the mean derivatives plus Nz/eta^2 for the noise variance.
// Hidden components contribute zero rows.
MatX channel_fim(const ChannelParams& cp, const RfParams& rf, const UraGeometry& geom);

// Global parameters [p(3), v(3), sfv(3K), phases(D_phi), moduli(Kt J), eta].
// Coherent: one phase per component (D_phi = Kt); noncoherent: one per (component, PA).
struct GlobalState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  std::vector<Vec3> sfv;               // K surfaces
  VecX phase;                          // index k (coherent) or j*Kt + k (noncoherent)
  VecX modulus;                        // index j*Kt + k
  double eta = 1.0;
  std::vector<std::vector<bool>> visible;  // [j][k]; empty means all visible

  int surfaces() const { return static_cast<int>(sfv.size()); }
  int components() const { return surfaces() + 1; }
  bool is_visible(int j, int k) const { return visible.empty() || visible[j][k]; }
};

int phase_dim(PhaseMode mode, int components, int pas);
int global_dim(PhaseMode mode, int surfaces, int pas);

// Index helpers into the global vector.
struct GlobalLayout {
  int K = 0;
  int J = 0;
  PhaseMode mode = PhaseMode::coherent;

  int kt() const { return K + 1; }
  int pos() const { return 0; }
  int vel() const { return 3; }
  int sfv(int k) const { return 6 + 3 * k; }  // k = 0 .. K-1
  int phase(int j, int k) const {
    return 6 + 3 * K + (mode == PhaseMode::coherent ? k : j * kt() + k);
  }
  int modulus(int j, int k) const { return 6 + 3 * K + phase_dim(mode, kt(), J) + j * kt() + k; }
  int eta() const { return global_dim(mode, K, J) - 1; }
  int dim() const { return global_dim(mode, K, J); }
};

// Builds the global state from realized per-(PA, component) complex amplitudes that include
// no path loss; moduli take the free-space gain of the local ray. Coherent phases follow PA 0.
GlobalState make_global_state(const Scene& scene, const Vec6& x, const std::vector<Vec3>& sfv,
                              const std::vector<std::vector<cd>>& amplitude, double eta,
                              const std::vector<std::vector<bool>>& visible, PhaseMode mode);

VecX to_vector(const GlobalState& g, PhaseMode mode, int pas);
GlobalState from_vector(const VecX& v, const GlobalState& like, PhaseMode mode, int pas);

// Local parameters at PA j; local phase = global phase - 2 pi |r'| / lambda.
ChannelParams local_params(const Scene& scene, const GlobalState& g, int j, PhaseMode mode);

// D_g x D_l matrix d eta_ch^T / d eta_global. Modulus-to-geometry terms are zero by design.
MatX jacobian(const Scene& scene, const GlobalState& g, int j, PhaseMode mode);

// Sum over PAs of G_j F_ch G_j^T.
MatX snapshot_fim(const Scene& scene, const GlobalState& g, PhaseMode mode);

// Sample mean of snapshot FIMs; fixed-order reduction independent of the thread count.
MatX mc_expectation(const Scene& scene, const std::vector<GlobalState>& draws, PhaseMode mode,
                    int threads = 1);

struct PseudoVariances {
  double phase = 1e6;
  double modulus = 1e6;
  double eta = 1e6;
};

struct TransitionModel {
  MatX F;
  MatX Q;
};

TransitionModel global_transition(const NcvModel& ncv, double sigma_sfv, int surfaces, int pas,
                                  PhaseMode mode, const PseudoVariances& pv = {});

// Symmetric eigen inverse of the unit-diagonal scaled matrix with eigenvalues floored at
// 1e-12 * max; floored counts the clamps.
MatX inverse_floor(const MatX& A, int* floored = nullptr);

struct BoundStep {
  double peb = 0.0;
  VecX meb;       // per surface
  MatX info;      // J_{n|n}
  int floored = 0;  // eigenvalues clamped while inverting along this step
};

// J_{n|n-1} = (F J^-1 F^T + Q)^-1 and J_{n|n} = J_g + J_{n|n-1}, starting from J_init = J_{1|0}.
std::vector<BoundStep> pcrlb_recursion(const std::vector<MatX>& snapshots, const MatX& F,
                                       const MatX& Q, const MatX& J_init, int surfaces);

// Root-trace bounds from an information matrix.
double position_bound(const MatX& info, int* floored = nullptr);
VecX mapping_bounds(const MatX& info, int surfaces, int* floored = nullptr);

}  // namespace dmslam
