#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace loopscope {

struct PcaResult {
  std::size_t components = 0;
  std::size_t dim = 0;
  std::vector<double> mean;                 // dim
  std::vector<double> directions;           // components x dim, orthonormal rows
  std::vector<double> explained_variance;   // per component (covariance eigenvalue)
  std::vector<double> explained_ratio;      // non-increasing, sums to <= 1
  std::vector<double> projected;            // num_points x components
};

/// Mean-centered projection onto the leading principal directions of the
/// sample covariance. `points` is row-major num_points x dim. Components
/// beyond the data rank get ratio 0. Each direction's largest-magnitude
/// coordinate is made positive so the result is deterministic.
PcaResult pca_project(std::span<const float> points, std::size_t dim, std::size_t components);

}  // namespace loopscope
