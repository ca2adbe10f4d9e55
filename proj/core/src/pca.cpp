#include "pbact/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pbact/errors.hpp"

namespace pbact {

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is row-major
// d x d and is destroyed; v receives the eigenvectors as columns.
void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int d) {
  v.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;

  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<size_t>(r) * d + c];
  };

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += at(a, p, q) * at(a, p, q);
    if (off < 1e-26) break;

    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(a, p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double app = at(a, p, p);
        const double aqq = at(a, q, q);
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int i = 0; i < d; ++i) {
          const double aip = at(a, i, p);
          const double aiq = at(a, i, q);
          at(a, i, p) = c * aip - s * aiq;
          at(a, i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          const double api = at(a, p, i);
          const double aqi = at(a, q, i);
          at(a, p, i) = c * api - s * aqi;
          at(a, q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          const double vip = at(v, i, p);
          const double viq = at(v, i, q);
          at(v, i, p) = c * vip - s * viq;
          at(v, i, q) = s * vip + c * viq;
        }
      }
    }
  }
}

}  // namespace

PcaResult pca_project(
    const std::vector<std::pair<std::string, std::vector<double>>>& vectors,
    int k) {
  const int n = static_cast<int>(vectors.size());
  if (n < 2) throw ConfigError("pca_project: need at least 2 vectors");
  const int dim = static_cast<int>(vectors.front().second.size());
  if (k < 1 || k > dim)
    throw ConfigError("pca_project: k out of range");
  for (const auto& [id, v] : vectors)
    if (static_cast<int>(v.size()) != dim)
      throw DimensionError("pca_project: inconsistent vector dimensions");

  PcaResult result;
  result.mean.assign(dim, 0.0);
  for (const auto& [id, v] : vectors)
    for (int j = 0; j < dim; ++j) result.mean[j] += v[j];
  for (double& m : result.mean) m /= n;

  // Covariance with the (n-1) denominator.
  std::vector<double> cov(static_cast<size_t>(dim) * dim, 0.0);
  for (const auto& [id, v] : vectors) {
    for (int i = 0; i < dim; ++i) {
      const double di = v[i] - result.mean[i];
      for (int j = i; j < dim; ++j)
        cov[static_cast<size_t>(i) * dim + j] += di * (v[j] - result.mean[j]);
    }
  }
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) {
      const double value = cov[static_cast<size_t>(i) * dim + j] / (n - 1);
      cov[static_cast<size_t>(i) * dim + j] = value;
      cov[static_cast<size_t>(j) * dim + i] = value;
    }

  std::vector<double> eigvecs;
  jacobi_eigen(cov, eigvecs, dim);

  std::vector<std::pair<double, int>> eigvals(dim);
  for (int i = 0; i < dim; ++i)
    eigvals[i] = {cov[static_cast<size_t>(i) * dim + i], i};
  std::stable_sort(eigvals.begin(), eigvals.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  double total_var = 0.0;
  for (const auto& [value, idx] : eigvals) total_var += std::max(value, 0.0);

  result.components.resize(k);
  result.explained_variance_ratio.resize(k);
  for (int c = 0; c < k; ++c) {
    const auto [value, col] = eigvals[c];
    std::vector<double> component(dim);
    for (int i = 0; i < dim; ++i)
      component[i] = eigvecs[static_cast<size_t>(i) * dim + col];
    // Sign convention: the largest-magnitude loading comes out positive.
    int strongest = 0;
    for (int i = 1; i < dim; ++i)
      if (std::fabs(component[i]) > std::fabs(component[strongest])) strongest = i;
    if (component[strongest] < 0.0)
      for (double& x : component) x = -x;
    result.components[c] = std::move(component);
    result.explained_variance_ratio[c] =
        total_var > 0.0 ? std::max(value, 0.0) / total_var : 0.0;
  }

  for (const auto& [id, v] : vectors) {
    std::vector<double> coords(k, 0.0);
    for (int c = 0; c < k; ++c)
      for (int j = 0; j < dim; ++j)
        coords[c] += (v[j] - result.mean[j]) * result.components[c][j];
    result.points.emplace_back(id, std::move(coords));
  }
  return result;
}

}  // namespace pbact
