#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pbact/tensor.hpp"
#include "pbact/types.hpp"

namespace pbact {

class Rng;

inline constexpr int kDefaultPbDim = 5;

/// Per-demonstration learnable latent: one [L, d_pb] matrix, zero-initialized,
/// never shared between demonstrations.
struct ParametricBias {
  std::string demo_id;
  Tensor matrix;  // [L, d_pb]
  bool trainable = true;
};

/// Layer-specific linear maps taking PB into the attention space, plus the
/// fixed (untrained) scaling coefficient applied to both bias terms.
struct PbProjection {
  int layer_index = 0;
  Tensor w_q;  // [d_pb, d_model]
  Tensor w_v;  // [d_pb, d_model]
  double alpha_pb = 0.1;
};

enum class TracePolarity { kPositive, kNegative };

/// Row-stochastic decoder self-attention matrices from one forward pass,
/// one [L, L] matrix per (layer, head).
struct AttentionTrace {
  int layers = 0;
  int heads = 0;
  int length = 0;
  std::vector<Tensor> mats;  // index = layer * heads + head
  std::string pb_demo_id;    // empty when no PB was applied
  TracePolarity polarity = TracePolarity::kPositive;

  const Tensor& at(int layer, int head) const;
  bool same_structure(const AttentionTrace& other) const;
};

/// PB registry keyed by demonstration id. The id set is fixed at
/// construction; lookups never create entries.
class PbTable {
 public:
  PbTable() = default;
  PbTable(const std::vector<std::pair<std::string, Label>>& demos, int length,
          int d_pb, bool trainable = true);

  const ParametricBias& lookup(const std::string& demo_id) const;
  ParametricBias& lookup(const std::string& demo_id);
  bool contains(const std::string& demo_id) const;
  Label label_of(const std::string& demo_id) const;

  /// Uniform draw over PBs whose label differs from own_label; throws
  /// NegativeUnavailableError when that set is empty.
  const ParametricBias& sample_negative(Label own_label, Rng& rng) const;

  size_t size() const { return entries_.size(); }
  int length() const { return length_; }
  int pb_dim() const { return d_pb_; }
  /// All ids in lexicographic order.
  std::vector<std::string> ids() const;
  const std::vector<std::string>& ids_with_label(Label l) const;
  int64_t parameter_count() const;

  /// Versioned JSON serialization; byte-stable for identical contents.
  std::string to_json() const;
  static PbTable from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static PbTable load(const std::filesystem::path& path);

 private:
  int length_ = 0;
  int d_pb_ = 0;
  std::map<std::string, ParametricBias> entries_;
  std::map<std::string, Label> labels_;
  std::vector<std::string> success_ids_;
  std::vector<std::string> failure_ids_;
};

/// Plain multi-head scaled dot-product attention over already-projected
/// Q, K, V of shape [L, d_model]. Returns the aggregated output and the
/// per-head attention matrices (single layer's worth: layers == 1).
std::pair<Tensor, AttentionTrace> scaled_dot_attention(const Tensor& q,
                                                       const Tensor& k,
                                                       const Tensor& v,
                                                       int n_heads);

/// Multi-head attention with the parametric bias added to query and value:
/// softmax(((Q + a*PB*Wq) K^T) / sqrt(d_k)) (V + a*PB*Wv), head-split after
/// the full-space bias addition.
std::pair<Tensor, AttentionTrace> attention_with_pb(const Tensor& q,
                                                    const Tensor& k,
                                                    const Tensor& v,
                                                    const ParametricBias& pb,
                                                    const PbProjection& proj,
                                                    int n_heads);

}  // namespace pbact
