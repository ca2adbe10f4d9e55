#include "pbact/optim.hpp"

#include <cmath>

#include "pbact/errors.hpp"

namespace pbact {

AdamW::AdamW(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (lr <= 0.0) throw ConfigError("AdamW: lr must be > 0");
}

void AdamW::register_param(const Tensor& t, double weight_decay) {
  if (!t.requires_grad())
    throw UsageError("AdamW: parameter does not require grad");
  State s;
  s.m.assign(t.numel(), 0.0);
  s.v.assign(t.numel(), 0.0);
  s.weight_decay = weight_decay;
  states_.emplace(t.node(), std::move(s));
}

bool AdamW::is_registered(const Tensor& t) const {
  return states_.count(t.node()) > 0;
}

void AdamW::step(std::span<const Tensor> touched) {
  for (const Tensor& param : touched) {
    auto it = states_.find(param.node());
    if (it == states_.end()) throw UsageError("AdamW: unregistered parameter");
    Tensor p = param;
    if (!p.has_grad()) continue;
    State& s = it->second;
    ++s.t;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    auto vals = p.mutable_values();
    const auto g = p.grad();
    for (size_t i = 0; i < vals.size(); ++i) {
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = s.m[i] / bc1;
      const double v_hat = s.v[i] / bc2;
      vals[i] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) +
                        s.weight_decay * vals[i]);
    }
  }
}

double clip_global_grad_norm(std::span<const Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (const Tensor& param : params) {
      Tensor p = param;
      if (!p.has_grad()) continue;
      auto* node = p.node();
      for (auto& g : node->grad) g *= factor;
    }
  }
  return norm;
}

}  // namespace pbact
