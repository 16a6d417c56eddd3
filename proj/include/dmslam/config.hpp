#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmslam/channel.hpp"
#include "dmslam/crlb.hpp"
#include "dmslam/engine.hpp"

namespace dmslam {

// Raised for any malformed or inconsistent scenario file; the message names the offending key
// or, for syntax errors, the line and column.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SurfaceSpec {
  Vec3 psfv = Vec3::Zero();  // starting point of the random walk
  cd mu{0.0, 0.0};           // lumped amplitude mean
  double gamma = 0.0;        // lumped amplitude variance
};

// Component k (0 = LOS) is hidden from PA j over steps [from, to], inclusive.
struct HiddenInterval {
  int component = 0;
  int pa = 0;
  int from = 1;
  int to = 1;
};

enum class TrajectoryMode { random, scripted };

struct TrajectorySpec {
  TrajectoryMode mode = TrajectoryMode::random;
  Vec6 x0 = Vec6::Zero();         // fictional starting point at step 0 (random mode)
  double sigma_v = 0.0;            // truth acceleration std, m/s^2
  std::vector<Vec3> waypoints;     // scripted mode
  double speed = 0.0;              // scripted mode, m/s
};

struct ScenarioConfig {
  std::string name;
  Scene scene;
  SurfaceSpec los;                   // psfv unused
  std::vector<SurfaceSpec> surfaces;
  double sigma_sfv_truth = 0.0;      // m
  TrajectorySpec trajectory;
  std::vector<HiddenInterval> hidden;
  double snr_db = 0.0;
  Wavefront wavefront = Wavefront::planar;
  int steps = 1;
  int mc_runs = 1;
  std::uint64_t seed = 1;
  EngineConfig filter;
  PseudoVariances pseudo;
  int crlb_draws = 0;  // 0: one draw per MC run

  int pas() const { return static_cast<int>(scene.pas.size()); }
  int components() const { return static_cast<int>(surfaces.size()) + 1; }
  bool visible(int component, int pa, int step) const;
};

ScenarioConfig parse_config(const std::string& text);
ScenarioConfig load_config(const std::string& path);

// Per-run seed used for both the dataset and the filter of Monte-Carlo run r.
std::uint64_t run_seed(std::uint64_t seed, int run);

}  // namespace dmslam
