#pragma once

#include <string>
#include <utility>
#include <vector>

namespace pbact {

struct PcaResult {
  std::vector<std::pair<std::string, std::vector<double>>> points;  // id -> k coords
  std::vector<double> explained_variance_ratio;                     // size k
  std::vector<std::vector<double>> components;                      // k rows of size dim
  std::vector<double> mean;                                         // size dim
};

/// Mean-centered covariance eigendecomposition (cyclic Jacobi). Components
/// are ordered by descending eigenvalue with the sign convention that the
/// largest-magnitude loading is positive. Rank-deficient inputs are fine;
/// trailing zero variance just yields zero ratios.
PcaResult pca_project(
    const std::vector<std::pair<std::string, std::vector<double>>>& vectors,
    int k);

}  // namespace pbact
