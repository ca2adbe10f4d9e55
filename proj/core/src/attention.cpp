#include "pbact/attention.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "pbact/errors.hpp"
#include "pbact/io.hpp"
#include "pbact/rng.hpp"

namespace pbact {

using nlohmann::json;

std::string to_string(Label l) { return l == Label::kSuccess ? "success" : "failure"; }

Label label_from_string(const std::string& s) {
  if (s == "success") return Label::kSuccess;
  if (s == "failure") return Label::kFailure;
  throw ConfigError("unknown label: " + s);
}

std::string to_string(FailureMode m) {
  switch (m) {
    case FailureMode::kNone: return "none";
    case FailureMode::kMiss: return "miss";
    case FailureMode::kEarlyRelease: return "early_release";
    case FailureMode::kWander: return "wander";
  }
  throw ConfigError("bad failure mode");
}

FailureMode failure_mode_from_string(const std::string& s) {
  if (s == "none") return FailureMode::kNone;
  if (s == "miss") return FailureMode::kMiss;
  if (s == "early_release") return FailureMode::kEarlyRelease;
  if (s == "wander") return FailureMode::kWander;
  throw ConfigError("unknown failure mode: " + s);
}

const Tensor& AttentionTrace::at(int layer, int head) const {
  return mats.at(static_cast<size_t>(layer) * heads + head);
}

bool AttentionTrace::same_structure(const AttentionTrace& other) const {
  return layers == other.layers && heads == other.heads && length == other.length;
}

// --------------------------------------------------------------------------
// PbTable
// --------------------------------------------------------------------------

PbTable::PbTable(const std::vector<std::pair<std::string, Label>>& demos,
                 int length, int d_pb, bool trainable)
    : length_(length), d_pb_(d_pb) {
  if (length <= 0 || d_pb <= 0) throw ConfigError("PbTable: L and d_pb must be positive");
  for (const auto& [id, label] : demos) {
    if (entries_.count(id)) throw IntegrityError("PbTable: duplicate demo id " + id);
    ParametricBias pb;
    pb.demo_id = id;
    pb.matrix = Tensor::zeros({length, d_pb}, trainable);
    pb.trainable = trainable;
    entries_.emplace(id, std::move(pb));
    labels_.emplace(id, label);
    (label == Label::kSuccess ? success_ids_ : failure_ids_).push_back(id);
  }
  std::sort(success_ids_.begin(), success_ids_.end());
  std::sort(failure_ids_.begin(), failure_ids_.end());
}

const ParametricBias& PbTable::lookup(const std::string& demo_id) const {
  auto it = entries_.find(demo_id);
  if (it == entries_.end())
    throw MissingPbError("no parametric bias for demo '" + demo_id + "'");
  return it->second;
}

ParametricBias& PbTable::lookup(const std::string& demo_id) {
  auto it = entries_.find(demo_id);
  if (it == entries_.end())
    throw MissingPbError("no parametric bias for demo '" + demo_id + "'");
  return it->second;
}

bool PbTable::contains(const std::string& demo_id) const {
  return entries_.count(demo_id) > 0;
}

Label PbTable::label_of(const std::string& demo_id) const {
  auto it = labels_.find(demo_id);
  if (it == labels_.end())
    throw MissingPbError("no label for demo '" + demo_id + "'");
  return it->second;
}

const ParametricBias& PbTable::sample_negative(Label own_label, Rng& rng) const {
  const auto& pool = own_label == Label::kSuccess ? failure_ids_ : success_ids_;
  if (pool.empty())
    throw NegativeUnavailableError(
        "no opposite-label sample available for negative PB (own label: " +
        to_string(own_label) + ")");
  return lookup(pool[rng.uniform_index(pool.size())]);
}

std::vector<std::string> PbTable::ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [id, pb] : entries_) out.push_back(id);
  return out;
}

const std::vector<std::string>& PbTable::ids_with_label(Label l) const {
  return l == Label::kSuccess ? success_ids_ : failure_ids_;
}

int64_t PbTable::parameter_count() const {
  return static_cast<int64_t>(entries_.size()) * length_ * d_pb_;
}

namespace {
constexpr int kPbTableFormatVersion = 1;
}

std::string PbTable::to_json() const {
  json j;
  j["format_version"] = kPbTableFormatVersion;
  j["length"] = length_;
  j["d_pb"] = d_pb_;
  json entries = json::object();
  for (const auto& [id, pb] : entries_) {
    json e;
    e["label"] = to_string(labels_.at(id));
    e["matrix"] = std::vector<double>(pb.matrix.values().begin(),
                                      pb.matrix.values().end());
    entries[id] = std::move(e);
  }
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

PbTable PbTable::from_json(const std::string& text) {
  json j = json::parse(text);
  const int version = j.at("format_version").get<int>();
  if (version != kPbTableFormatVersion)
    throw IntegrityError("PB table format version " + std::to_string(version) +
                         " unsupported (expected " +
                         std::to_string(kPbTableFormatVersion) + ")");
  const int length = j.at("length").get<int>();
  const int d_pb = j.at("d_pb").get<int>();
  std::vector<std::pair<std::string, Label>> demos;
  for (auto& [id, e] : j.at("entries").items())
    demos.emplace_back(id, label_from_string(e.at("label").get<std::string>()));
  PbTable table(demos, length, d_pb, true);
  for (auto& [id, e] : j.at("entries").items()) {
    auto vals = e.at("matrix").get<std::vector<double>>();
    auto dst = table.lookup(id).matrix.mutable_values();
    if (vals.size() != dst.size())
      throw IntegrityError("PB table entry '" + id + "' has wrong size");
    std::copy(vals.begin(), vals.end(), dst.begin());
  }
  return table;
}

void PbTable::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

PbTable PbTable::load(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

// --------------------------------------------------------------------------
// Attention ops
// --------------------------------------------------------------------------

namespace {

// Head-split scaled dot-product core shared by the plain and PB variants.
// Query rows may differ from key/value rows (cross-attention).
std::pair<Tensor, AttentionTrace> mha_core(const Tensor& q_eff, const Tensor& k,
                                           const Tensor& v_eff, int n_heads) {
  const int len = q_eff.shape()[0];
  const int d_model = q_eff.shape()[1];
  if (n_heads <= 0 || d_model % n_heads != 0)
    throw DimensionError("attention: d_model " + std::to_string(d_model) +
                         " not divisible by " + std::to_string(n_heads) + " heads");
  const int d_head = d_model / n_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_head));

  AttentionTrace trace;
  trace.layers = 1;
  trace.heads = n_heads;
  trace.length = len;

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = col_slice(q_eff, h * d_head, d_head);
    Tensor kh = col_slice(k, h * d_head, d_head);
    Tensor vh = col_slice(v_eff, h * d_head, d_head);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    Tensor attn = softmax_rows(scores);
    trace.mats.push_back(attn);
    head_outputs.push_back(matmul(attn, vh));
  }
  return {col_concat(head_outputs), std::move(trace)};
}

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape() != k.shape() ||
      q.shape()[1] != k.shape()[1])
    throw DimensionError(
        "attention: expected Q [Lq,d], K [Lk,d], V [Lk,d] with matching d");
}

}  // namespace

std::pair<Tensor, AttentionTrace> scaled_dot_attention(const Tensor& q,
                                                       const Tensor& k,
                                                       const Tensor& v,
                                                       int n_heads) {
  check_qkv(q, k, v);
  return mha_core(q, k, v, n_heads);
}

std::pair<Tensor, AttentionTrace> attention_with_pb(const Tensor& q,
                                                    const Tensor& k,
                                                    const Tensor& v,
                                                    const ParametricBias& pb,
                                                    const PbProjection& proj,
                                                    int n_heads) {
  check_qkv(q, k, v);
  if (pb.matrix.shape()[0] != q.shape()[0])
    throw DimensionError("attention_with_pb: PB length " +
                         std::to_string(pb.matrix.shape()[0]) +
                         " does not match sequence length " +
                         std::to_string(q.shape()[0]));
  Tensor pb_q = matmul(pb.matrix, proj.w_q);
  Tensor pb_v = matmul(pb.matrix, proj.w_v);
  Tensor q_eff = add(q, scale(pb_q, proj.alpha_pb));
  Tensor v_eff = add(v, scale(pb_v, proj.alpha_pb));
  auto [out, trace] = mha_core(q_eff, k, v_eff, n_heads);
  trace.pb_demo_id = pb.demo_id;
  return {std::move(out), std::move(trace)};
}

}  // namespace pbact
