#include "pbact/select.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pbact/checkpoint.hpp"
#include "pbact/errors.hpp"
#include "pbact/io.hpp"
#include "pbact/losses.hpp"
#include "pbact/numerics.hpp"
#include "pbact/parallel.hpp"
#include "pbact/rng.hpp"

namespace pbact {

using nlohmann::json;

std::string SelectionPlan::to_json() const {
  json j;
  j["strategy"] = strategy;
  j["subset_size"] = subset_size;
  j["selected_ids"] = selected_ids;
  j["scores_ref"] = scores_ref;
  j["rng_seed"] = rng_seed;
  return j.dump(2) + "\n";
}

SelectionPlan SelectionPlan::from_json(const std::string& text) {
  json j = json::parse(text);
  SelectionPlan p;
  p.strategy = j.at("strategy").get<std::string>();
  p.subset_size = j.at("subset_size").get<int>();
  p.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
  p.scores_ref = j.at("scores_ref").get<std::string>();
  p.rng_seed = j.at("rng_seed").get<uint64_t>();
  return p;
}

void SelectionPlan::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

SelectionPlan SelectionPlan::load(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

// --------------------------------------------------------------------------
// Scoring
// --------------------------------------------------------------------------

double score_failure(const Demonstration& failure, const PolicyModel& model,
                     const PbTable& pb_table) {
  if (failure.label != Label::kFailure)
    throw UsageError("score_failure: demo '" + failure.demo_id + "' is not a failure");
  const ParametricBias& own_pb = pb_table.lookup(failure.demo_id);
  const auto& success_ids = pb_table.ids_with_label(Label::kSuccess);
  if (success_ids.empty())
    throw ConfigError("score_failure: no successful samples in the PB table");

  const int chunk = model.config().chunk;
  const int len = static_cast<int>(failure.observations.size());
  if (len < chunk)
    throw ConfigError("score_failure: trajectory shorter than one chunk");

  std::vector<int> windows;
  for (int t = 0; t + chunk <= len; t += chunk) windows.push_back(t);
  const double inv_t = 1.0 / static_cast<double>(windows.size());

  NoGradGuard no_grad;
  // One positive trace per window, reused against every success.
  std::vector<Tensor> memories;
  std::vector<AttentionTrace> positive;
  for (int t : windows) {
    Tensor memory = model.encode(failure.observations[t]);
    positive.push_back(
        model.decode(memory, &own_pb, TracePolarity::kPositive).trace);
    memories.push_back(std::move(memory));
  }

  // Iterate successes in id order and finish with a correctly-rounded sum,
  // so the result is order-independent and exactly linear in duplicates.
  std::vector<double> per_success;
  per_success.reserve(success_ids.size());
  for (const auto& sid : success_ids) {
    const ParametricBias& neg_pb = pb_table.lookup(sid);
    double window_sum = 0.0;
    for (size_t w = 0; w < windows.size(); ++w) {
      auto neg =
          model.decode(memories[w], &neg_pb, TracePolarity::kNegative).trace;
      window_sum += trace_divergence(positive[w], neg).item();
    }
    per_success.push_back(window_sum * inv_t);
  }
  return exact_sum(per_success);
}

std::vector<SeedModel> load_seed_models(
    const std::vector<std::pair<uint64_t, std::filesystem::path>>& checkpoints) {
  std::vector<SeedModel> models;
  models.reserve(checkpoints.size());
  for (const auto& [seed, path] : checkpoints) {
    if (!file_exists(path))
      throw IntegrityError("missing checkpoint for seed " + std::to_string(seed) +
                           ": " + path.string());
    LoadedCheckpoint ckpt = load_checkpoint(path);
    PbTable table;  // ACT checkpoints carry no PB table reference
    if (!ckpt.pb_table_ref.empty())
      table = load_checkpoint_pb_table(path, ckpt);
    models.push_back(SeedModel{seed, std::move(ckpt.model), std::move(table)});
  }
  return models;
}

std::vector<FailureScore> score_all(
    const std::vector<const Demonstration*>& failures,
    const std::vector<SeedModel>& seed_models, int threads) {
  if (seed_models.empty()) throw ConfigError("score_all: no seed models");
  for (const auto& sm : seed_models)
    for (const auto* f : failures)
      if (!sm.pb_table.contains(f->demo_id))
        throw MissingPbError("seed " + std::to_string(sm.seed) +
                             " checkpoint does not cover failure '" +
                             f->demo_id + "'");

  const size_t n_seeds = seed_models.size();
  std::vector<double> k_values(failures.size() * n_seeds, 0.0);
  parallel_for(failures.size() * n_seeds, threads, [&](size_t job) {
    const size_t fi = job / n_seeds;
    const size_t si = job % n_seeds;
    k_values[job] =
        score_failure(*failures[fi], seed_models[si].model, seed_models[si].pb_table);
  });

  std::vector<FailureScore> scores(failures.size());
  for (size_t fi = 0; fi < failures.size(); ++fi) {
    FailureScore& s = scores[fi];
    s.demo_id = failures[fi]->demo_id;
    std::vector<double> per_seed_values;
    for (size_t si = 0; si < n_seeds; ++si) {
      s.per_seed.emplace_back(seed_models[si].seed, k_values[fi * n_seeds + si]);
      per_seed_values.push_back(k_values[fi * n_seeds + si]);
    }
    std::sort(s.per_seed.begin(), s.per_seed.end());
    s.mean = exact_mean(per_seed_values);
  }

  rank_scores(scores);
  return scores;
}

void rank_scores(std::vector<FailureScore>& scores) {
  // Ascending mean, demo_id as the deterministic tie-break.
  std::sort(scores.begin(), scores.end(),
            [](const FailureScore& a, const FailureScore& b) {
              if (a.mean != b.mean) return a.mean < b.mean;
              return a.demo_id < b.demo_id;
            });
  for (size_t i = 0; i < scores.size(); ++i) scores[i].rank = static_cast<int>(i) + 1;
}

// --------------------------------------------------------------------------
// Plans and manifests
// --------------------------------------------------------------------------

namespace {

std::vector<FailureScore> ranked_copy(std::vector<FailureScore> scores) {
  std::sort(scores.begin(), scores.end(),
            [](const FailureScore& a, const FailureScore& b) {
              return a.rank < b.rank;
            });
  return scores;
}

}  // namespace

SelectionPlan build_plan(const std::vector<FailureScore>& scores,
                         const std::string& strategy, int subset_size,
                         std::optional<uint64_t> rng_seed) {
  const int n = static_cast<int>(scores.size());
  if (subset_size < 0 || subset_size > n)
    throw ConfigError("build_plan: subset_size " + std::to_string(subset_size) +
                      " out of range for " + std::to_string(n) + " failures");

  SelectionPlan plan;
  plan.strategy = strategy;
  plan.subset_size = subset_size;
  if (subset_size == 0) return plan;  // degenerate: success-only manifest

  const auto ranked = ranked_copy(scores);
  auto take = [&](int first_rank) {
    for (int i = 0; i < subset_size; ++i)
      plan.selected_ids.push_back(ranked[first_rank - 1 + i].demo_id);
  };

  if (strategy == "kl_low") {
    take(1);
  } else if (strategy == "kl_high") {
    take(n - subset_size + 1);
  } else if (strategy == "kl_mid") {
    // The size-n window centred at the median rank.
    const int first = (n - subset_size + 1) / 2 + 1;
    take(first);
  } else if (strategy == "random") {
    if (!rng_seed) throw ConfigError("build_plan: random strategy needs a seed");
    plan.rng_seed = *rng_seed;
    std::vector<std::string> ids;
    for (const auto& s : ranked) ids.push_back(s.demo_id);
    std::sort(ids.begin(), ids.end());
    Rng rng(*rng_seed);
    for (size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[rng.uniform_index(i)]);
    plan.selected_ids.assign(ids.begin(), ids.begin() + subset_size);
  } else {
    throw ConfigError("build_plan: unknown strategy '" + strategy + "'");
  }
  std::sort(plan.selected_ids.begin(), plan.selected_ids.end());
  return plan;
}

std::vector<SelectionPlan> build_random_partition(
    const std::vector<FailureScore>& scores, int n_subsets, int subset_size,
    uint64_t seed) {
  const int n = static_cast<int>(scores.size());
  if (n_subsets <= 0 || subset_size <= 0 || n_subsets * subset_size > n)
    throw ConfigError("build_random_partition: request exceeds failure count");
  std::vector<std::string> ids;
  for (const auto& s : scores) ids.push_back(s.demo_id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[rng.uniform_index(i)]);

  std::vector<SelectionPlan> plans;
  for (int k = 0; k < n_subsets; ++k) {
    SelectionPlan plan;
    plan.strategy = "random";
    plan.subset_size = subset_size;
    plan.rng_seed = seed;
    plan.selected_ids.assign(ids.begin() + k * subset_size,
                             ids.begin() + (k + 1) * subset_size);
    std::sort(plan.selected_ids.begin(), plan.selected_ids.end());
    plans.push_back(std::move(plan));
  }
  return plans;
}

DatasetManifest reconstruct_manifest(const DatasetManifest& base_success_manifest,
                                     const SelectionPlan& plan) {
  DatasetManifest manifest;
  manifest.success_ids = base_success_manifest.success_ids;
  std::sort(manifest.success_ids.begin(), manifest.success_ids.end());
  manifest.failure_ids = plan.selected_ids;
  std::sort(manifest.failure_ids.begin(), manifest.failure_ids.end());
  for (const auto& id : manifest.failure_ids) {
    if (std::binary_search(manifest.success_ids.begin(),
                           manifest.success_ids.end(), id))
      throw IntegrityError("reconstruct_manifest: id '" + id +
                           "' is in both the success set and the plan");
  }
  manifest.strategy = plan.strategy;
  manifest.scores_hash = plan.scores_ref;
  manifest.selection_seed = plan.rng_seed;
  return manifest;
}

// --------------------------------------------------------------------------
// Scores CSV
// --------------------------------------------------------------------------

void save_scores_csv(const std::filesystem::path& path,
                     const std::vector<FailureScore>& scores) {
  std::ostringstream out;
  out << "demo_id";
  if (!scores.empty())
    for (const auto& [seed, k] : scores.front().per_seed)
      out << ",K_seed_" << seed;
  out << ",mean,rank\n";
  auto ranked = ranked_copy(scores);
  for (const auto& s : ranked) {
    out << s.demo_id;
    for (const auto& [seed, k] : s.per_seed) out << "," << format_double(k);
    out << "," << format_double(s.mean) << "," << s.rank << "\n";
  }
  write_text_file(path, out.str());
}

std::vector<FailureScore> load_scores_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError("scores csv: empty file");
  std::vector<uint64_t> seeds;
  {
    std::istringstream header(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(header, col, ',')) cols.push_back(col);
    if (cols.size() < 3 || cols.front() != "demo_id" ||
        cols[cols.size() - 2] != "mean" || cols.back() != "rank")
      throw IntegrityError("scores csv: bad header");
    for (size_t i = 1; i + 2 < cols.size(); ++i) {
      const std::string prefix = "K_seed_";
      if (cols[i].rfind(prefix, 0) != 0)
        throw IntegrityError("scores csv: bad seed column '" + cols[i] + "'");
      seeds.push_back(std::stoull(cols[i].substr(prefix.size())));
    }
  }
  std::vector<FailureScore> scores;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != seeds.size() + 3)
      throw IntegrityError("scores csv: bad row");
    FailureScore s;
    s.demo_id = fields[0];
    for (size_t i = 0; i < seeds.size(); ++i)
      s.per_seed.emplace_back(seeds[i], std::stod(fields[1 + i]));
    s.mean = std::stod(fields[fields.size() - 2]);
    s.rank = std::stoi(fields.back());
    scores.push_back(std::move(s));
  }
  return scores;
}

double mean_cross_label_divergence(const PolicyModel& model, const PbTable& table,
                                   const std::vector<Observation>& probes) {
  const auto& success_ids = table.ids_with_label(Label::kSuccess);
  const auto& failure_ids = table.ids_with_label(Label::kFailure);
  if (success_ids.empty() || failure_ids.empty())
    throw ConfigError("mean_cross_label_divergence: need both label classes");
  if (probes.empty())
    throw ConfigError("mean_cross_label_divergence: no probe observations");

  NoGradGuard no_grad;
  std::vector<double> values;
  for (const auto& obs : probes) {
    Tensor memory = model.encode(obs);
    std::vector<AttentionTrace> s_traces, f_traces;
    for (const auto& sid : success_ids)
      s_traces.push_back(model.decode(memory, &table.lookup(sid)).trace);
    for (const auto& fid : failure_ids)
      f_traces.push_back(model.decode(memory, &table.lookup(fid)).trace);
    for (const auto& st : s_traces)
      for (const auto& ft : f_traces)
        values.push_back(trace_divergence(st, ft).item());
  }
  return exact_mean(values);
}

}  // namespace pbact
