#include "pbact/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pbact/errors.hpp"

namespace pbact {

GradCheckReport finite_difference_check(
    const std::function<Tensor()>& f,
    std::span<const std::pair<std::string, Tensor>> params, double h) {
  if (h <= 0.0) throw UsageError("finite_difference_check: h must be > 0");

  for (auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  Tensor loss = f();
  backward(loss);

  // Snapshot analytic grads before the numeric evaluations disturb anything.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi].second;
    auto vals = p.mutable_values();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double up = f().item();
      vals[i] = orig - h;
      const double down = f().item();
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {params[pi].first, i, a, numeric, rel};
      }
    }
  }
  return report;
}

}  // namespace pbact
