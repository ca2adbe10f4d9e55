#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pbact/tensor.hpp"

namespace pbact {

struct GradCheckEntry {
  std::string param;
  int64_t index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  int64_t entries_checked = 0;

  bool passed(double tol) const { return max_rel_error <= tol; }
};

/// Central finite differences against the reverse-mode gradients of the
/// scalar returned by f. f must rebuild its graph from `params` on every
/// call. Relative errors use denominators floored at 1e-8.
GradCheckReport finite_difference_check(
    const std::function<Tensor()>& f,
    std::span<const std::pair<std::string, Tensor>> params, double h);

}  // namespace pbact
