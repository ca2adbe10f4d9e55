#include "pbact/losses.hpp"

#include <cmath>
#include <vector>

#include "pbact/errors.hpp"

namespace pbact {

LossBreakdown total_loss(double l_act, double l_kl, double lambda_kl) {
  if (lambda_kl < 0.0) throw ConfigError("lambda_kl must be >= 0");
  LossBreakdown b;
  b.l_act = l_act;
  b.l_kl = l_kl;
  b.lambda_kl = lambda_kl;
  b.total = l_act + lambda_kl * l_kl;
  return b;
}

namespace {

// Validates and renormalizes one distribution vector.
std::vector<double> checked_distribution(std::span<const double> p, const char* arg) {
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0)
      throw NumericError(std::string("kl_divergence: negative mass in ") + arg);
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-5)
    throw NumericError(std::string("kl_divergence: ") + arg +
                       " does not sum to 1 (sum " + std::to_string(total) + ")");
  std::vector<double> out(p.begin(), p.end());
  for (double& v : out) v /= total;
  return out;
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw DimensionError("kl_divergence: length mismatch " +
                         std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  const auto pn = checked_distribution(p, "P");
  const auto qn = checked_distribution(q, "Q");
  double acc = 0.0;
  for (size_t i = 0; i < pn.size(); ++i)
    acc += pn[i] * std::log((pn[i] + kKlEpsilon) / (qn[i] + kKlEpsilon));
  return acc;
}

double sym_kl(std::span<const double> p, std::span<const double> q) {
  return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p));
}

namespace {

// Row-averaged KL(P||Q) of two [L,L] attention matrices as a graph tensor.
Tensor kl_rows(const Tensor& p, const Tensor& q) {
  Tensor lp = log(add_const(p, kKlEpsilon));
  Tensor lq = log(add_const(q, kKlEpsilon));
  Tensor contrib = hadamard(p, sub(lp, lq));
  return scale(sum(contrib), 1.0 / p.shape()[0]);
}

Tensor sym_kl_rows(const Tensor& p, const Tensor& q) {
  return scale(add(kl_rows(p, q), kl_rows(q, p)), 0.5);
}

Tensor mean_of_scalars(const std::vector<Tensor>& xs) {
  Tensor acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, 1.0 / static_cast<double>(xs.size()));
}

}  // namespace

Tensor trace_divergence(const AttentionTrace& a_pos, const AttentionTrace& a_neg) {
  if (!a_pos.same_structure(a_neg))
    throw DimensionError("trace_divergence: trace structure mismatch");
  if (a_pos.mats.empty()) throw UsageError("trace_divergence: empty traces");
  std::vector<Tensor> per_layer;
  per_layer.reserve(a_pos.layers);
  for (int l = 0; l < a_pos.layers; ++l) {
    std::vector<Tensor> per_head;
    per_head.reserve(a_pos.heads);
    for (int h = 0; h < a_pos.heads; ++h)
      per_head.push_back(sym_kl_rows(a_pos.at(l, h), a_neg.at(l, h)));
    per_layer.push_back(mean_of_scalars(per_head));
  }
  return mean_of_scalars(per_layer);
}

Tensor kl_regularizer(const AttentionTrace& a_pos, const AttentionTrace& a_neg) {
  return scale(trace_divergence(a_pos, a_neg), -1.0);
}

}  // namespace pbact
