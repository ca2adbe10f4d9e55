#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "pbact/tensor.hpp"

namespace pbact {

/// Decoupled-weight-decay adaptive-moment optimizer with per-tensor moment
/// state and update counters. step() only touches the tensors it is handed,
/// so parameters absent from a batch (sparse PB entries) stay bit-identical.
class AdamW {
 public:
  AdamW(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// weight_decay is per-tensor: model weights decay, PB entries do not.
  void register_param(const Tensor& t, double weight_decay);
  bool is_registered(const Tensor& t) const;

  /// One update over exactly these (registered) tensors using their current
  /// grads; tensors without a populated grad are skipped.
  void step(std::span<const Tensor> touched);

 private:
  struct State {
    std::vector<double> m, v;
    int64_t t = 0;
    double weight_decay = 0.0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<detail::TensorNode*, State> states_;
};

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_global_grad_norm(std::span<const Tensor> params, double max_norm);

}  // namespace pbact
