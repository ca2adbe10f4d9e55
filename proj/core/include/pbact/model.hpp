#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pbact/attention.hpp"
#include "pbact/tensor.hpp"
#include "pbact/types.hpp"

namespace pbact {

/// Model + optimization hyperparameters. Desk-scale defaults; every field is
/// config-exposed and recorded verbatim into checkpoints.
struct PolicyConfig {
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int chunk = 20;  // L: predicted action-sequence length == PB row count
  int action_dim = 3;
  int obs_dim = 6;
  int obs_tokens = 2;  // encoder memory tokens the observation is embedded into
  int ffn_dim = 256;
  int d_pb = kDefaultPbDim;
  bool use_pb = true;  // false = plain ACT ablation (no PB, no KL)
  double alpha_pb = 0.1;
  double lambda_kl = 0.01;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  int epochs = 300;
  int batch_size = 10;
  uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static PolicyConfig from_json(const std::string& text);
  bool operator==(const PolicyConfig&) const = default;
};

/// Transformer encoder-decoder action-chunking policy. The encoder embeds the
/// observation into memory tokens; the decoder turns L learned query tokens
/// into an action chunk through PB-augmented self-attention (when enabled),
/// cross-attention to memory, and a feed-forward block per layer (pre-LN).
class PolicyModel {
 public:
  struct ForwardResult {
    Tensor chunk;  // [L, action_dim]
    AttentionTrace trace;
  };

  PolicyModel(const PolicyConfig& config, uint64_t init_seed);

  const PolicyConfig& config() const { return cfg_; }

  /// Observation -> memory tokens [obs_tokens, d_model].
  Tensor encode(const Observation& obs) const;

  /// Memory -> (chunk, decoder self-attention trace). pb must be non-null
  /// iff the config uses PB.
  ForwardResult decode(const Tensor& memory, const ParametricBias* pb,
                       TracePolarity polarity = TracePolarity::kPositive) const;

  ForwardResult forward(const Observation& obs, const ParametricBias* pb,
                        TracePolarity polarity = TracePolarity::kPositive) const;

  /// All trainable weights (PB table excluded), stable order and names.
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
    return params_;
  }
  Tensor param(const std::string& name) const;
  int64_t parameter_count() const;

 private:
  struct Linear {
    Tensor w, b;
  };
  struct AttnBlock {
    Linear q, k, v, o;
  };
  struct LayerNormAffine {
    Tensor gain, bias;
  };
  struct EncoderLayer {
    LayerNormAffine ln1, ln2;
    AttnBlock attn;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    LayerNormAffine ln1, ln2, ln3;
    AttnBlock self_attn;
    PbProjection pb_proj;  // only populated when cfg_.use_pb
    AttnBlock cross_attn;
    Linear ff1, ff2;
  };

  Tensor reg(const std::string& name, Tensor t);
  Linear make_linear(const std::string& name, int in, int out, Rng& rng);
  AttnBlock make_attn(const std::string& name, Rng& rng);
  LayerNormAffine make_ln(const std::string& name);
  Tensor apply_ln(const LayerNormAffine& ln, const Tensor& x) const;
  Tensor apply_linear(const Linear& lin, const Tensor& x) const;

  PolicyConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;

  Linear obs_proj_;
  Tensor enc_pos_;
  std::vector<EncoderLayer> enc_;
  Tensor query_embed_;
  std::vector<DecoderLayer> dec_;
  LayerNormAffine final_ln_;
  Linear head_;
};

/// Exact trainable-scalar counts derived from a config: the model's own
/// weights and, separately, a PB table of n_demos entries.
struct ParameterCount {
  int64_t model = 0;
  int64_t pb_table = 0;
};
ParameterCount count_parameters(const PolicyConfig& config, int n_demos);

}  // namespace pbact
