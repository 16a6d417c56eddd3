#include "dmslam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dmslam {

Assignment hungarian_assign(const MatX& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  Assignment out;
  out.row_to_col.assign(n, -1);
  if (n == 0 || m == 0) {
    for (int c = 0; c < m; ++c) out.unmatched_cols.push_back(c);
    return out;
  }
  if (!cost.allFinite()) throw std::invalid_argument("assignment costs must be finite");

  // Shortest augmenting path on the transposed problem when rows outnumber columns, so
  // the smaller side is always fully matched.
  const bool flip = n > m;
  const MatX a = flip ? MatX(cost.transpose()) : cost;
  const int R = static_cast<int>(a.rows());
  const int C = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(R + 1, 0.0), v(C + 1, 0.0);
  std::vector<int> p(C + 1, 0), way(C + 1, 0);
  for (int i = 1; i <= R; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(C + 1, inf);
    std::vector<bool> used(C + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= C; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= C; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<bool> col_used(m, false);
  for (int j = 1; j <= C; ++j) {
    if (p[j] == 0) continue;
    const int r = flip ? j - 1 : p[j] - 1;
    const int c = flip ? p[j] - 1 : j - 1;
    out.row_to_col[r] = c;
    col_used[c] = true;
    out.cost += cost(r, c);
  }
  for (int c = 0; c < m; ++c)
    if (!col_used[c]) out.unmatched_cols.push_back(c);
  return out;
}

double rmse(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("rmse of an empty set");
  double s = 0.0;
  for (double e : errors) s += e * e;
  return std::sqrt(s / static_cast<double>(errors.size()));
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty set");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

MappingError mapping_error(const std::vector<Vec3>& truth, const std::vector<Vec3>& estimates) {
  MatX cost(truth.size(), estimates.size());
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (std::size_t j = 0; j < estimates.size(); ++j) cost(i, j) = (truth[i] - estimates[j]).norm();
  const Assignment a = hungarian_assign(cost);
  MappingError out;
  out.error.assign(truth.size(), std::numeric_limits<double>::quiet_NaN());
  out.estimate_of = a.row_to_col;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (a.row_to_col[i] >= 0) out.error[i] = cost(i, a.row_to_col[i]);
  return out;
}

}  // namespace dmslam
