#include "pbact/model.hpp"

#include <nlohmann/json.hpp>

#include "pbact/errors.hpp"
#include "pbact/rng.hpp"

namespace pbact {

using nlohmann::json;

void PolicyConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(enc_layers, "enc_layers");
  positive(dec_layers, "dec_layers");
  positive(chunk, "chunk");
  positive(action_dim, "action_dim");
  positive(obs_dim, "obs_dim");
  positive(obs_tokens, "obs_tokens");
  positive(ffn_dim, "ffn_dim");
  positive(d_pb, "d_pb");
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model must be divisible by n_heads");
  if (alpha_pb < 0.0) throw ConfigError("alpha_pb must be >= 0");
  if (lambda_kl < 0.0) throw ConfigError("lambda_kl must be >= 0");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

std::string PolicyConfig::to_json() const {
  json j;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["enc_layers"] = enc_layers;
  j["dec_layers"] = dec_layers;
  j["chunk"] = chunk;
  j["action_dim"] = action_dim;
  j["obs_dim"] = obs_dim;
  j["obs_tokens"] = obs_tokens;
  j["ffn_dim"] = ffn_dim;
  j["d_pb"] = d_pb;
  j["use_pb"] = use_pb;
  j["alpha_pb"] = alpha_pb;
  j["lambda_kl"] = lambda_kl;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  return j.dump();
}

PolicyConfig PolicyConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  PolicyConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.chunk = j.at("chunk").get<int>();
  c.action_dim = j.at("action_dim").get<int>();
  c.obs_dim = j.at("obs_dim").get<int>();
  c.obs_tokens = j.at("obs_tokens").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.d_pb = j.at("d_pb").get<int>();
  c.use_pb = j.at("use_pb").get<bool>();
  c.alpha_pb = j.at("alpha_pb").get<double>();
  c.lambda_kl = j.at("lambda_kl").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

// --------------------------------------------------------------------------
// Construction
// --------------------------------------------------------------------------

Tensor PolicyModel::reg(const std::string& name, Tensor t) {
  params_.emplace_back(name, t);
  return t;
}

PolicyModel::Linear PolicyModel::make_linear(const std::string& name, int in,
                                             int out, Rng& rng) {
  Linear lin;
  lin.w = reg(name + ".w", xavier_uniform(in, out, rng));
  lin.b = reg(name + ".b", Tensor::zeros({out}, true));
  return lin;
}

PolicyModel::AttnBlock PolicyModel::make_attn(const std::string& name, Rng& rng) {
  AttnBlock blk;
  blk.q = make_linear(name + ".q", cfg_.d_model, cfg_.d_model, rng);
  // No bias on K: softmax is invariant to a per-row constant shift of the
  // scores, so a key bias is a dead parameter.
  blk.k.w = reg(name + ".k.w", xavier_uniform(cfg_.d_model, cfg_.d_model, rng));
  blk.v = make_linear(name + ".v", cfg_.d_model, cfg_.d_model, rng);
  blk.o = make_linear(name + ".o", cfg_.d_model, cfg_.d_model, rng);
  return blk;
}

PolicyModel::LayerNormAffine PolicyModel::make_ln(const std::string& name) {
  LayerNormAffine ln;
  ln.gain = reg(name + ".gain", Tensor::full({cfg_.d_model}, 1.0, true));
  ln.bias = reg(name + ".bias", Tensor::zeros({cfg_.d_model}, true));
  return ln;
}

PolicyModel::PolicyModel(const PolicyConfig& config, uint64_t init_seed)
    : cfg_(config) {
  cfg_.validate();
  Rng rng(init_seed);

  obs_proj_ = make_linear("obs_proj", cfg_.obs_dim, cfg_.obs_tokens * cfg_.d_model, rng);
  enc_pos_ = reg("enc_pos", Tensor::randn({cfg_.obs_tokens, cfg_.d_model}, rng, 0.02, true));

  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string base = "enc" + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = make_ln(base + ".ln1");
    layer.attn = make_attn(base + ".attn", rng);
    layer.ln2 = make_ln(base + ".ln2");
    layer.ff1 = make_linear(base + ".ff1", cfg_.d_model, cfg_.ffn_dim, rng);
    layer.ff2 = make_linear(base + ".ff2", cfg_.ffn_dim, cfg_.d_model, rng);
    enc_.push_back(std::move(layer));
  }

  query_embed_ = reg("query_embed", Tensor::randn({cfg_.chunk, cfg_.d_model}, rng, 0.02, true));

  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string base = "dec" + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = make_ln(base + ".ln1");
    layer.self_attn = make_attn(base + ".self_attn", rng);
    if (cfg_.use_pb) {
      layer.pb_proj.layer_index = l;
      layer.pb_proj.alpha_pb = cfg_.alpha_pb;
      layer.pb_proj.w_q = reg(base + ".pb.wq",
                              xavier_uniform(cfg_.d_pb, cfg_.d_model, rng));
      layer.pb_proj.w_v = reg(base + ".pb.wv",
                              xavier_uniform(cfg_.d_pb, cfg_.d_model, rng));
    }
    layer.ln2 = make_ln(base + ".ln2");
    layer.cross_attn = make_attn(base + ".cross_attn", rng);
    layer.ln3 = make_ln(base + ".ln3");
    layer.ff1 = make_linear(base + ".ff1", cfg_.d_model, cfg_.ffn_dim, rng);
    layer.ff2 = make_linear(base + ".ff2", cfg_.ffn_dim, cfg_.d_model, rng);
    dec_.push_back(std::move(layer));
  }

  final_ln_ = make_ln("final_ln");
  head_ = make_linear("head", cfg_.d_model, cfg_.action_dim, rng);
}

Tensor PolicyModel::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw UsageError("no parameter named '" + name + "'");
}

int64_t PolicyModel::parameter_count() const {
  int64_t total = 0;
  for (const auto& [n, t] : params_) total += t.numel();
  return total;
}

// --------------------------------------------------------------------------
// Forward
// --------------------------------------------------------------------------

Tensor PolicyModel::apply_ln(const LayerNormAffine& ln, const Tensor& x) const {
  return add_rowvec(mul_rowvec(layer_norm(x), ln.gain), ln.bias);
}

Tensor PolicyModel::apply_linear(const Linear& lin, const Tensor& x) const {
  return lin.b.defined() ? linear(x, lin.w, lin.b) : matmul(x, lin.w);
}

Tensor PolicyModel::encode(const Observation& obs) const {
  if (static_cast<int>(obs.state.size()) != cfg_.obs_dim)
    throw DimensionError("encode: observation has " +
                         std::to_string(obs.state.size()) + " dims, config expects " +
                         std::to_string(cfg_.obs_dim));
  Tensor obs_row = Tensor::from({1, cfg_.obs_dim}, obs.state);
  Tensor x = reshape(apply_linear(obs_proj_, obs_row),
                     {cfg_.obs_tokens, cfg_.d_model});
  x = add(x, enc_pos_);
  for (const auto& layer : enc_) {
    Tensor h = apply_ln(layer.ln1, x);
    auto [attn_out, tr] = scaled_dot_attention(apply_linear(layer.attn.q, h),
                                               apply_linear(layer.attn.k, h),
                                               apply_linear(layer.attn.v, h),
                                               cfg_.n_heads);
    x = add(x, apply_linear(layer.attn.o, attn_out));
    Tensor h2 = apply_ln(layer.ln2, x);
    Tensor ff = apply_linear(layer.ff2, gelu(apply_linear(layer.ff1, h2)));
    x = add(x, ff);
  }
  return x;
}

PolicyModel::ForwardResult PolicyModel::decode(const Tensor& memory,
                                               const ParametricBias* pb,
                                               TracePolarity polarity) const {
  if (cfg_.use_pb && pb == nullptr)
    throw UsageError("decode: this config uses PB but none was supplied");
  if (!cfg_.use_pb && pb != nullptr)
    throw UsageError("decode: PB supplied but the config has use_pb=false");
  if (pb && pb->matrix.shape()[0] != cfg_.chunk)
    throw DimensionError("decode: PB row count " +
                         std::to_string(pb->matrix.shape()[0]) +
                         " != chunk length " + std::to_string(cfg_.chunk));

  AttentionTrace trace;
  trace.layers = cfg_.dec_layers;
  trace.heads = cfg_.n_heads;
  trace.length = cfg_.chunk;
  trace.polarity = polarity;
  if (pb) trace.pb_demo_id = pb->demo_id;

  Tensor y = query_embed_;
  for (const auto& layer : dec_) {
    Tensor h = apply_ln(layer.ln1, y);
    Tensor q = apply_linear(layer.self_attn.q, h);
    Tensor k = apply_linear(layer.self_attn.k, h);
    Tensor v = apply_linear(layer.self_attn.v, h);
    std::pair<Tensor, AttentionTrace> sa =
        pb ? attention_with_pb(q, k, v, *pb, layer.pb_proj, cfg_.n_heads)
           : scaled_dot_attention(q, k, v, cfg_.n_heads);
    for (auto& m : sa.second.mats) trace.mats.push_back(m);
    y = add(y, apply_linear(layer.self_attn.o, sa.first));

    Tensor hc = apply_ln(layer.ln2, y);
    auto [cross_out, ctr] = scaled_dot_attention(
        apply_linear(layer.cross_attn.q, hc),
        apply_linear(layer.cross_attn.k, memory),
        apply_linear(layer.cross_attn.v, memory), cfg_.n_heads);
    y = add(y, apply_linear(layer.cross_attn.o, cross_out));

    Tensor hf = apply_ln(layer.ln3, y);
    y = add(y, apply_linear(layer.ff2, gelu(apply_linear(layer.ff1, hf))));
  }

  Tensor chunk = apply_linear(head_, apply_ln(final_ln_, y));
  return {std::move(chunk), std::move(trace)};
}

PolicyModel::ForwardResult PolicyModel::forward(const Observation& obs,
                                                const ParametricBias* pb,
                                                TracePolarity polarity) const {
  return decode(encode(obs), pb, polarity);
}

ParameterCount count_parameters(const PolicyConfig& config, int n_demos) {
  if (n_demos < 0) throw ConfigError("count_parameters: n_demos must be >= 0");
  PolicyModel probe(config, 0);
  ParameterCount count;
  count.model = probe.parameter_count();
  count.pb_table = static_cast<int64_t>(n_demos) * config.chunk * config.d_pb;
  return count;
}

}  // namespace pbact
