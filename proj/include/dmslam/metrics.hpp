#pragma once

#include <vector>

#include "dmslam/types.hpp"

namespace dmslam {

struct Assignment {
  std::vector<int> row_to_col;  // -1 for unmatched rows
  std::vector<int> unmatched_cols;
  double cost = 0.0;
};

// Minimum-cost one-to-one assignment on an n x m nonnegative cost matrix; min(n, m) pairs.
Assignment hungarian_assign(const MatX& cost);

// sqrt of the mean of squared errors.
double rmse(const std::vector<double>& errors);

// Sample quantile with linear interpolation between order statistics (R type 7).
double quantile(std::vector<double> values, double q);

struct MappingError {
  std::vector<double> error;     // per true surface; NaN when it has no associated estimate
  std::vector<int> estimate_of;  // index into the estimates, -1 when missing
};

// Associates estimates to truths by Euclidean distance and reports per-truth errors.
MappingError mapping_error(const std::vector<Vec3>& truth, const std::vector<Vec3>& estimates);

}  // namespace dmslam
