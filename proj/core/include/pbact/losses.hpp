#pragma once

#include <span>

#include "pbact/attention.hpp"
#include "pbact/tensor.hpp"

namespace pbact {

/// Epsilon added to both log arguments in every KL term; keeps the
/// symmetrized divergence finite when attention mass vanishes.
inline constexpr double kKlEpsilon = 1e-8;

/// Training halts when |l_kl| exceeds this: the negated divergence is
/// unbounded below, so runaway growth must abort loudly.
inline constexpr double kKlAbortThreshold = 1e3;

/// One optimization step's loss decomposition.
struct LossBreakdown {
  double l_act = 0.0;
  double l_kl = 0.0;
  double total = 0.0;
  double lambda_kl = 0.0;
};

/// total = l_act + lambda_kl * l_kl; negative lambda_kl is a config error.
LossBreakdown total_loss(double l_act, double l_kl, double lambda_kl);

/// Sum_i p_i * ln((p_i + eps) / (q_i + eps)) on renormalized inputs.
/// Inputs must be same-length, nonnegative, each summing to 1 within 1e-5.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// 0.5 * [KL(P||Q) + KL(Q||P)]; symmetric bit-for-bit.
double sym_kl(std::span<const double> p, std::span<const double> q);

/// Differentiable symmetrized KL between two traces: applied per attention
/// row, averaged over rows, then heads, then layers. Returns a scalar graph
/// tensor so the regularizer can train PBs and weights.
Tensor trace_divergence(const AttentionTrace& a_pos, const AttentionTrace& a_neg);

/// Eq-style regularizer: the negated trace divergence (minimizing it pushes
/// the two attention distributions apart).
Tensor kl_regularizer(const AttentionTrace& a_pos, const AttentionTrace& a_neg);

}  // namespace pbact
