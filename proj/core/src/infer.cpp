#include "pbact/infer.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "pbact/errors.hpp"
#include "pbact/io.hpp"
#include "pbact/numerics.hpp"
#include "pbact/parallel.hpp"
#include "pbact/rng.hpp"

namespace pbact {

using nlohmann::json;

namespace {

std::vector<double> normalized(const std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm < 1e-12)
    throw NumericError("embedding: zero-norm initial observation");
  std::vector<double> out(v);
  for (double& x : out) x /= norm;
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw DimensionError("embedding: dimensionality mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

EmbeddingIndex EmbeddingIndex::build(
    const std::vector<const Demonstration*>& success_demos) {
  if (success_demos.empty())
    throw ConfigError("EmbeddingIndex: no success demos");
  EmbeddingIndex index;
  for (const auto* d : success_demos) {
    if (d->label != Label::kSuccess)
      throw UsageError("EmbeddingIndex: demo '" + d->demo_id + "' is not a success");
    if (d->observations.empty())
      throw IntegrityError("EmbeddingIndex: demo '" + d->demo_id + "' has no observations");
    index.entries_.push_back({d->demo_id, normalized(d->observations.front().state)});
  }
  std::sort(index.entries_.begin(), index.entries_.end(),
            [](const Entry& a, const Entry& b) { return a.demo_id < b.demo_id; });
  return index;
}

EmbeddingIndex::Match EmbeddingIndex::retrieve(const Observation& query) const {
  if (entries_.empty()) throw ConfigError("EmbeddingIndex: empty index");
  const auto q = normalized(query.state);
  Match best{entries_.front().demo_id, dot(q, entries_.front().embedding)};
  // Entries are id-sorted, so strict improvement implements the tie-break.
  for (size_t i = 1; i < entries_.size(); ++i) {
    const double sim = dot(q, entries_[i].embedding);
    if (sim > best.similarity) best = {entries_[i].demo_id, sim};
  }
  return best;
}

std::string EmbeddingIndex::to_json() const {
  json j;
  j["format_version"] = 1;
  json entries = json::array();
  for (const auto& e : entries_) {
    json entry;
    entry["demo_id"] = e.demo_id;
    entry["embedding"] = e.embedding;
    entries.push_back(std::move(entry));
  }
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

EmbeddingIndex EmbeddingIndex::from_json(const std::string& text) {
  json j = json::parse(text);
  EmbeddingIndex index;
  for (const auto& e : j.at("entries"))
    index.entries_.push_back({e.at("demo_id").get<std::string>(),
                              e.at("embedding").get<std::vector<double>>()});
  return index;
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

RetrievedPb retrieve_pb(const Observation& initial_obs, const EmbeddingIndex& index,
                        const PbTable& pb_table) {
  const auto match = index.retrieve(initial_obs);
  RetrievedPb out;
  out.demo_id = match.demo_id;
  out.similarity = match.similarity;
  out.pb = &pb_table.lookup(match.demo_id);  // throws MissingPbError if absent
  return out;
}

RolloutResult rollout(const PolicyModel& model, const ParametricBias* pb,
                      const WorldState& initial_state, int max_steps) {
  if (max_steps < 1) throw ConfigError("rollout: max_steps must be >= 1");
  NoGradGuard no_grad;
  RolloutResult result;
  WorldState state = initial_state;
  const int chunk = model.config().chunk;
  int steps = 0;
  while (steps < max_steps && !is_lifted(state)) {
    const auto fwd = model.forward(observe(state), pb);
    const auto chunk_values = fwd.chunk.values();
    for (int i = 0; i < chunk && steps < max_steps; ++i, ++steps) {
      const std::vector<double> row(
          chunk_values.begin() + static_cast<size_t>(i) * model.config().action_dim,
          chunk_values.begin() + static_cast<size_t>(i + 1) * model.config().action_dim);
      state = step(state, model_to_action(row));
      result.trajectory.push_back(state);
      if (is_lifted(state)) break;
    }
  }
  result.success = is_lifted(state);
  return result;
}

std::string EvalReport::to_json() const {
  json j;
  j["condition"] = condition;
  j["rollouts_per_seed"] = rollouts_per_seed;
  j["env_seed_base"] = env_seed_base;
  json rates = json::array();
  for (const auto& [seed, rate] : per_seed_rates) {
    json r;
    r["seed"] = seed;
    r["rate"] = rate;
    rates.push_back(std::move(r));
  }
  j["per_seed_rates"] = std::move(rates);
  j["mean_rate"] = mean_rate;
  j["stddev_rate"] = stddev_rate;
  json logs_json = json::array();
  for (const auto& [seed, entries] : logs) {
    json seed_log;
    seed_log["seed"] = seed;
    json items = json::array();
    for (const auto& e : entries) {
      json item;
      item["rollout_index"] = e.rollout_index;
      item["object_x"] = e.object_x;
      item["object_y"] = e.object_y;
      item["pb_id"] = e.pb_id;
      item["similarity"] = e.similarity;
      item["success"] = e.success;
      items.push_back(std::move(item));
    }
    seed_log["rollouts"] = std::move(items);
    logs_json.push_back(std::move(seed_log));
  }
  j["logs"] = std::move(logs_json);
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  json j = json::parse(text);
  EvalReport r;
  r.condition = j.at("condition").get<std::string>();
  r.rollouts_per_seed = j.at("rollouts_per_seed").get<int>();
  r.env_seed_base = j.at("env_seed_base").get<uint64_t>();
  for (const auto& item : j.at("per_seed_rates"))
    r.per_seed_rates.emplace_back(item.at("seed").get<uint64_t>(),
                                  item.at("rate").get<double>());
  r.mean_rate = j.at("mean_rate").get<double>();
  r.stddev_rate = j.at("stddev_rate").get<double>();
  for (const auto& seed_log : j.at("logs")) {
    std::vector<RolloutLogEntry> entries;
    for (const auto& item : seed_log.at("rollouts")) {
      RolloutLogEntry e;
      e.rollout_index = item.at("rollout_index").get<int>();
      e.object_x = item.at("object_x").get<double>();
      e.object_y = item.at("object_y").get<double>();
      e.pb_id = item.at("pb_id").get<std::string>();
      e.similarity = item.at("similarity").get<double>();
      e.success = item.at("success").get<bool>();
      entries.push_back(e);
    }
    r.logs.emplace_back(seed_log.at("seed").get<uint64_t>(), std::move(entries));
  }
  return r;
}

void EvalReport::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
  return EvalReport::from_json(read_text_file(path));
}

EvalReport evaluate(const std::string& condition,
                    const std::vector<SeedModel>& seed_models,
                    const EmbeddingIndex& index, int n_rollouts,
                    uint64_t env_seed_base, int max_steps, int threads) {
  if (n_rollouts < 1) throw ConfigError("evaluate: n_rollouts must be >= 1");
  if (seed_models.empty()) throw ConfigError("evaluate: no seed models");

  // Paired evaluation: initial states depend only on (env_seed_base, index),
  // never on the seed or condition under test.
  std::vector<WorldState> starts;
  starts.reserve(n_rollouts);
  for (int i = 0; i < n_rollouts; ++i) {
    Rng rng = Rng::fork(env_seed_base, static_cast<uint64_t>(i));
    starts.push_back(sample_initial_state(rng));
  }

  EvalReport report;
  report.condition = condition;
  report.rollouts_per_seed = n_rollouts;
  report.env_seed_base = env_seed_base;
  report.logs.resize(seed_models.size());

  std::vector<double> rates(seed_models.size(), 0.0);
  parallel_for(seed_models.size(), threads, [&](size_t si) {
    const SeedModel& sm = seed_models[si];
    std::vector<RolloutLogEntry> log;
    int successes = 0;
    for (int i = 0; i < n_rollouts; ++i) {
      RolloutLogEntry entry;
      entry.rollout_index = i;
      entry.object_x = starts[i].object_x;
      entry.object_y = starts[i].object_y;
      const ParametricBias* pb = nullptr;
      if (sm.model.config().use_pb) {
        const auto retrieved =
            retrieve_pb(observe(starts[i]), index, sm.pb_table);
        if (sm.pb_table.label_of(retrieved.demo_id) != Label::kSuccess)
          throw IntegrityError("evaluate: retrieved PB '" + retrieved.demo_id +
                               "' is not success-labeled");
        pb = retrieved.pb;
        entry.pb_id = retrieved.demo_id;
        entry.similarity = retrieved.similarity;
      }
      entry.success = rollout(sm.model, pb, starts[i], max_steps).success;
      successes += entry.success ? 1 : 0;
      log.push_back(entry);
    }
    rates[si] = static_cast<double>(successes) / n_rollouts;
    report.logs[si] = {sm.seed, std::move(log)};
  });

  for (size_t si = 0; si < seed_models.size(); ++si)
    report.per_seed_rates.emplace_back(seed_models[si].seed, rates[si]);
  std::sort(report.per_seed_rates.begin(), report.per_seed_rates.end());
  std::sort(report.logs.begin(), report.logs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  report.mean_rate = exact_mean(rates);
  report.stddev_rate = sample_stddev(rates);
  return report;
}

}  // namespace pbact
