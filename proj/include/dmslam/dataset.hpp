#pragma once

#include <string>
#include <vector>

#include "dmslam/config.hpp"

namespace dmslam {

// Ground truth of one run, indexed by step n = 1..N at position n-1.
struct Truth {
  std::vector<Vec6> x;
  std::vector<std::vector<Vec3>> sfv;                  // [n][k], surfaces only
  std::vector<std::vector<std::vector<cd>>> amplitude;  // [n][j][component]
  std::vector<std::vector<std::vector<bool>>> visible;  // [n][j][component]
  double eta = 0.0;

  int steps() const { return static_cast<int>(x.size()); }
  int visible_count(int n, int j) const;  // n is 0-based
};

struct Dataset {
  Truth truth;
  std::vector<std::vector<CVec>> obs;  // [n][j]
};

// Truth trajectories per the configured mode and observations with visibility gating.
// noise=false writes the noise-free mean (still reporting the SNR-derived eta).
Dataset generate_dataset(const ScenarioConfig& cfg, std::uint64_t seed, bool noise = true);

// obs.bin (little-endian float64, interleaved re/im, shape [N][J][Nz]) with obs.json sidecar,
// plus truth_mt.csv, truth_sfv.csv and truth_visibility.csv.
void write_dataset(const Dataset& ds, const ScenarioConfig& cfg, const std::string& dir);

std::vector<std::vector<CVec>> read_observations(const std::string& dir);

}  // namespace dmslam
