#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dmslam/channel.hpp"
#include "dmslam/geometry.hpp"
#include "dmslam/moments.hpp"
#include "dmslam/priors.hpp"

namespace dmslam {

enum class Variant { nzm, zm };
enum class Route { fast, dense };
// Low-rank closure of the fast route. mvector: one coherent m-vector per feature, averaged
// over MT particles. principal: one vector per feature, the leading eigenpair of its own
// moment-matched covariance. spectral: eigen-truncated factor of the full moment-matched
// covariance including cross-feature terms.
enum class Closure { mvector, principal, spectral };

struct EngineConfig {
  int particles = 2000;
  double dt = 0.05;
  double sigma_v = 0.5;
  double sigma_v0 = 0.1;  // initial velocity std per axis
  Box3 mt_prior;
  double eta_min = 1e-9;
  double eta_max = 1e-4;
  double c_eta = 10.0;
  double c_gamma = 1000.0;
  double sigma_mu = 0.03;
  double sigma_sfv = 0.004;
  ExistenceParams existence;
  double gamma_max = 5.0;
  double mu_max = 1e-3;
  Box3 birth_box;
  std::vector<Box3> partitions;  // empty: the birth box is the only partition
  int n_grid = 2000;
  double birth_cov_floor = 1e-4;  // m^2, added to the Bartlett scatter
  double t_dec = 0.5;
  double t_pru = 0.1;
  bool regularize = true;
  // Lower bounds on the MT regularization kernel std, so a collapsed cloud keeps moving.
  double kernel_floor_position = 0.0;  // m
  double kernel_floor_velocity = 0.0;  // m/s
  Variant variant = Variant::nzm;
  Route route = Route::fast;
  Closure closure = Closure::principal;
  // PF particles per MT particle in the MT update message; 1 is the paired form.
  int iota_samples = 1;
  int threads = 1;
  std::uint64_t seed = 1;
};

struct Scene {
  RfParams rf;
  std::vector<PaConfig> pas;
};

struct MtBelief {
  std::vector<Vec6> x;
  VecX w;
};

struct NoiseBelief {
  VecX eta;
  VecX w;
};

struct PfTrack {
  int id = 0;
  bool los = false;
  int born = 0;
  std::vector<Vec3> psfv;  // unused for the LOS track
  VecX gamma;
  CVec mu;
  VecX w;     // sums to the existence mass
  VecX ppr;   // posterior PPR probability per PA; zeta during a step
  bool declared = false;

  int size() const { return static_cast<int>(w.size()); }
  double existence() const { return w.sum(); }
};

struct FilterState {
  int step = 0;  // last processed step; 0 before the first observation
  MtBelief mt;
  std::vector<NoiseBelief> noise;
  std::vector<PfTrack> tracks;  // tracks[0] is the LOS once initialized
  int next_id = 1;
};

struct TrackEstimate {
  int id = 0;
  bool los = false;
  Vec3 psfv = Vec3::Zero();
  double gamma = 0.0;
  cd mu{0.0, 0.0};
  double existence = 0.0;
  bool declared = false;
  VecX ppr;
};

struct Estimate {
  int step = 0;
  Vec6 mt = Vec6::Zero();
  VecX eta;
  std::vector<TrackEstimate> tracks;
};

// Per-PA log-domain update messages for every track. kappa/omega values omit the constant
// shared by both hypotheses (see eval_message).
struct PaMessages {
  VecX iota;                    // per MT particle
  VecX nu;                      // per noise particle
  std::vector<VecX> kappa1;     // [track][particle]
  std::vector<double> kappa0;   // [track]
  std::vector<double> omega1;   // [track]
  std::vector<double> omega0;   // [track]
};

// Deterministic chunked parallel loop; results must be written per index.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

CMat residual_projector(const CMat& psi);

struct BirthProposal {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  std::vector<Vec3> candidates;
  VecX bartlett;  // unnormalized
};

// Candidates are drawn from rng; residuals are per PA.
BirthProposal birth_proposal(const std::vector<CVec>& residuals, const Vec3& p_mt, const Scene& scene,
                             const Box3& partition, int n_grid, CounterRng& rng);

std::vector<int> resample_systematic(const VecX& weights, int count, double u0);

double kernel_bandwidth(int dim, int particles);

class Engine {
 public:
  Engine(Scene scene, EngineConfig cfg);

  const Scene& scene() const { return scene_; }
  const EngineConfig& config() const { return cfg_; }

  // (i) prediction and birth for step state.step + 1; obs feeds the birth proposal.
  FilterState predict(const FilterState& state, const std::vector<CVec>& obs) const;
  // (ii)+(iii) all update messages, each computed once.
  std::vector<PaMessages> messages(const FilterState& predicted, const std::vector<CVec>& obs) const;
  // Beliefs from predicted state and messages; weights are normalized, nothing resampled.
  FilterState beliefs(const FilterState& predicted, const std::vector<PaMessages>& msgs) const;
  FilterState resample(const FilterState& posterior) const;
  FilterState manage(const FilterState& state) const;
  Estimate estimate(const FilterState& state) const;

  // Full step: predict, messages, beliefs, estimate, management, resampling.
  FilterState step(const FilterState& state, const std::vector<CVec>& obs, Estimate* est = nullptr) const;

  // Dense-route problem for one PA of a predicted state (all MT x PF particle pairs).
  DenseProblem dense_problem(const FilterState& predicted, const std::vector<CVec>& obs, int j) const;

  // Path-loss response of a track at an MT position; nullopt on a degenerate ray.
  std::optional<CVec> steering(const Vec3& p_mt, const std::optional<Vec3>& psfv, int j) const;

 private:
  std::vector<PaMessages> fast_messages(const FilterState& predicted, const std::vector<CVec>& obs) const;
  std::vector<PaMessages> dense_route_messages(const FilterState& predicted,
                                               const std::vector<CVec>& obs) const;
  void initialize(FilterState& st) const;
  void add_births(FilterState& st, const std::vector<CVec>& obs) const;
  PfTrack newborn(int step, bool los, int index) const;
  double partition_volume_fraction(int q) const;

  Scene scene_;
  EngineConfig cfg_;
  NcvModel ncv_;
  DummyPdf dummy_;
};

}  // namespace dmslam
