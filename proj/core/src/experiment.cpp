#include "pbact/experiment.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "pbact/checkpoint.hpp"
#include "pbact/errors.hpp"
#include "pbact/infer.hpp"
#include "pbact/io.hpp"
#include "pbact/parallel.hpp"
#include "pbact/pca.hpp"
#include "pbact/report.hpp"
#include "pbact/select.hpp"
#include "pbact/train.hpp"

namespace pbact {

using nlohmann::json;

Experiment::Experiment(ExperimentConfig config, std::filesystem::path out_dir)
    : config_(std::move(config)), out_(std::move(out_dir)) {
  config_.validate();
  config_hash_ = hash_hex(config_.to_ini_text());
}

// --------------------------------------------------------------------------
// Paths
// --------------------------------------------------------------------------

std::filesystem::path Experiment::demos_path() const {
  return out_ / "dataset" / "demos.jsonl";
}

std::filesystem::path Experiment::manifest_path(const std::string& name) const {
  return out_ / "dataset" / ("manifest_" + name + ".json");
}

std::filesystem::path Experiment::run_dir(const std::string& condition,
                                          uint64_t seed) const {
  return out_ / "runs" / condition / ("seed" + std::to_string(seed));
}

std::filesystem::path Experiment::checkpoint_path(const std::string& condition,
                                                  uint64_t seed) const {
  return run_dir(condition, seed) / "checkpoint.bin";
}

std::filesystem::path Experiment::scores_path() const {
  return out_ / "scores" / "failure_scores.csv";
}

std::filesystem::path Experiment::eval_path(const std::string& condition) const {
  return out_ / "eval" / (condition + ".json");
}

std::vector<std::string> Experiment::p1_conditions() const {
  return {"act_ds", "act_full", "proposed_ds", "proposed_full"};
}

std::vector<std::string> Experiment::p2_conditions() const {
  std::vector<std::string> conditions;
  for (int k = 0; k < config_.random_subsets; ++k)
    conditions.push_back("proposed_rand" + std::to_string(k));
  conditions.push_back("proposed_low");
  conditions.push_back("proposed_mid");
  conditions.push_back("proposed_high");
  if (config_.retrain_act_baselines) {
    std::vector<std::string> act;
    for (const auto& c : conditions) act.push_back("act" + c.substr(8));
    conditions.insert(conditions.end(), act.begin(), act.end());
  }
  return conditions;
}

// --------------------------------------------------------------------------
// Index
// --------------------------------------------------------------------------

namespace {
constexpr const char* kIndexFile = "experiment.json";
}

void Experiment::record_artifact(const std::string& name, const std::string& kind,
                                 const std::filesystem::path& path) {
  const auto index_path = out_ / kIndexFile;
  json index = json::object();
  if (file_exists(index_path)) index = json::parse(read_text_file(index_path));
  json entry;
  entry["kind"] = kind;
  entry["path"] = std::filesystem::relative(path, out_).generic_string();
  entry["config_hash"] = config_hash_;
  index[name] = std::move(entry);
  write_text_file(index_path, index.dump(2) + "\n");
}

void Experiment::write_resolved_config() {
  write_text_file(out_ / "config.resolved.ini", config_.to_ini_text());
  record_artifact("config", "config", out_ / "config.resolved.ini");
}

void Experiment::require_artifact(const std::filesystem::path& path,
                                  const std::string& produced_by) const {
  if (!file_exists(path))
    throw IntegrityError("missing artifact " + path.string() + "; run " +
                         produced_by + " first");
}

bool Experiment::verify(std::ostream& diagnostics) const {
  const auto index_path = out_ / kIndexFile;
  if (!file_exists(index_path)) {
    diagnostics << "no experiment index at " << index_path.string() << "\n";
    return false;
  }
  const json index = json::parse(read_text_file(index_path));
  bool clean = true;
  for (const auto& [name, entry] : index.items()) {
    const auto path = out_ / entry.at("path").get<std::string>();
    if (!file_exists(path)) {
      diagnostics << "dangling artifact '" << name << "': " << path.string()
                  << "\n";
      clean = false;
    }
    if (entry.at("config_hash").get<std::string>() != config_hash_) {
      diagnostics << "artifact '" << name
                  << "' was produced under a different config\n";
      clean = false;
    }
  }
  return clean;
}

// --------------------------------------------------------------------------
// Pipeline steps
// --------------------------------------------------------------------------

void Experiment::gen_data() {
  write_resolved_config();
  auto [demos, manifest] =
      generate_dataset(config_.n_success, config_.n_failure, config_.failure_mix,
                       config_.data_seed, config_.episode_steps);
  save_demonstrations(demos_path(), demos);
  manifest.save(manifest_path("full"));

  DatasetManifest success_only;
  success_only.success_ids = manifest.success_ids;
  success_only.strategy = "generated";
  success_only.save(manifest_path("success"));

  record_artifact("demos", "dataset", demos_path());
  record_artifact("manifest_full", "manifest", manifest_path("full"));
  record_artifact("manifest_success", "manifest", manifest_path("success"));
}

void Experiment::run_train_jobs(const std::vector<TrainJob>& jobs) {
  require_artifact(demos_path(), "gen-data");
  const auto demos = load_demonstrations(demos_path());

  // Manifests load once up front; training jobs then run independently.
  std::map<std::string, DatasetManifest> manifests;
  for (const auto& job : jobs) {
    if (!manifests.count(job.manifest_name)) {
      require_artifact(manifest_path(job.manifest_name),
                       job.manifest_name == "full" || job.manifest_name == "success"
                           ? "gen-data"
                           : "select");
      manifests[job.manifest_name] =
          DatasetManifest::load(manifest_path(job.manifest_name));
    }
  }

  parallel_for(jobs.size(), config_.threads, [&](size_t i) {
    const TrainJob& job = jobs[i];
    PolicyConfig policy = config_.policy(job.use_pb, job.seed);
    TrainOptions options;
    options.out_dir = run_dir(job.condition, job.seed);
    options.run_id = job.condition + "_seed" + std::to_string(job.seed);
    options.manifest_ref = manifest_path(job.manifest_name).generic_string();
    try {
      train(demos, manifests.at(job.manifest_name), policy, options);
    } catch (const Error& e) {
      throw Error(e.code(), job.condition + " seed " + std::to_string(job.seed) +
                                ": " + e.what());
    }
  });

  for (const auto& job : jobs)
    record_artifact(job.condition + "_seed" + std::to_string(job.seed),
                    "checkpoint", checkpoint_path(job.condition, job.seed));
}

void Experiment::train_p1() {
  std::vector<TrainJob> jobs;
  for (const uint64_t seed : config_.seeds) {
    jobs.push_back({"act_ds", "success", false, seed});
    jobs.push_back({"act_full", "full", false, seed});
    jobs.push_back({"proposed_ds", "success", true, seed});
    jobs.push_back({"proposed_full", "full", true, seed});
  }
  run_train_jobs(jobs);
}

void Experiment::score_failures() {
  require_artifact(demos_path(), "gen-data");
  const auto demos = load_demonstrations(demos_path());
  const auto demo_index = index_demonstrations(demos);
  require_artifact(manifest_path("full"), "gen-data");
  const auto manifest = DatasetManifest::load(manifest_path("full"));

  std::vector<std::pair<uint64_t, std::filesystem::path>> checkpoints;
  for (const uint64_t seed : config_.seeds) {
    require_artifact(checkpoint_path("proposed_full", seed), "train");
    checkpoints.emplace_back(seed, checkpoint_path("proposed_full", seed));
  }
  const auto seed_models = load_seed_models(checkpoints);

  std::vector<const Demonstration*> failures;
  for (const auto& id : manifest.failure_ids) failures.push_back(demo_index.at(id));

  const auto scores = score_all(failures, seed_models, config_.threads);
  save_scores_csv(scores_path(), scores);
  record_artifact("failure_scores", "scores", scores_path());
}

void Experiment::select_subsets() {
  require_artifact(scores_path(), "score-failures");
  require_artifact(manifest_path("success"), "gen-data");
  const auto scores = load_scores_csv(scores_path());
  const auto success_manifest = DatasetManifest::load(manifest_path("success"));
  const std::string scores_hash = file_hash_hex(scores_path());

  auto emit = [&](const std::string& name, SelectionPlan plan) {
    plan.scores_ref = scores_hash;
    plan.save(out_ / "plans" / ("plan_" + name + ".json"));
    DatasetManifest manifest = reconstruct_manifest(success_manifest, plan);
    manifest.save(manifest_path(name));
    record_artifact("plan_" + name, "plan", out_ / "plans" / ("plan_" + name + ".json"));
    record_artifact("manifest_" + name, "manifest", manifest_path(name));
  };

  emit("kl_low", build_plan(scores, "kl_low", config_.subset_size));
  emit("kl_mid", build_plan(scores, "kl_mid", config_.subset_size));
  emit("kl_high", build_plan(scores, "kl_high", config_.subset_size));
  const auto random_plans = build_random_partition(
      scores, config_.random_subsets, config_.subset_size, config_.selection_seed);
  for (size_t k = 0; k < random_plans.size(); ++k)
    emit("rand" + std::to_string(k), random_plans[k]);
}

void Experiment::select_one(const std::string& strategy, int subset_size) {
  require_artifact(scores_path(), "score-failures");
  require_artifact(manifest_path("success"), "gen-data");
  const auto scores = load_scores_csv(scores_path());
  const auto success_manifest = DatasetManifest::load(manifest_path("success"));

  SelectionPlan plan =
      strategy == "random"
          ? build_plan(scores, strategy, subset_size, config_.selection_seed)
          : build_plan(scores, strategy, subset_size);
  plan.scores_ref = file_hash_hex(scores_path());
  const std::string name = strategy == "random" ? "rand0" : strategy;
  plan.save(out_ / "plans" / ("plan_" + name + ".json"));
  DatasetManifest manifest = reconstruct_manifest(success_manifest, plan);
  manifest.save(manifest_path(name));
  record_artifact("plan_" + name, "plan", out_ / "plans" / ("plan_" + name + ".json"));
  record_artifact("manifest_" + name, "manifest", manifest_path(name));
}

void Experiment::retrain() {
  std::vector<TrainJob> jobs;
  auto manifest_of = [](const std::string& condition) {
    // proposed_rand0 -> rand0, act_low -> low ... manifests are named by
    // selection strategy.
    const auto pos = condition.find('_');
    return condition.substr(pos + 1) == "low" || condition.substr(pos + 1) == "mid" ||
                   condition.substr(pos + 1) == "high"
               ? "kl_" + condition.substr(pos + 1)
               : condition.substr(pos + 1);
  };
  for (const auto& condition : p2_conditions()) {
    const bool use_pb = condition.rfind("proposed", 0) == 0;
    if (!file_exists(manifest_path(manifest_of(condition)))) continue;
    for (const uint64_t seed : config_.seeds)
      jobs.push_back({condition, manifest_of(condition), use_pb, seed});
  }
  if (jobs.empty())
    throw IntegrityError("missing artifact " +
                         manifest_path("kl_low").string() + "; run select first");
  run_train_jobs(jobs);
}

void Experiment::eval_all() {
  require_artifact(demos_path(), "gen-data");
  const auto demos = load_demonstrations(demos_path());
  const auto demo_index = index_demonstrations(demos);
  require_artifact(manifest_path("success"), "gen-data");
  const auto success_manifest = DatasetManifest::load(manifest_path("success"));

  std::vector<const Demonstration*> successes;
  for (const auto& id : success_manifest.success_ids)
    successes.push_back(demo_index.at(id));
  const auto index = EmbeddingIndex::build(successes);
  index.save(out_ / "eval" / "embedding_index.json");
  record_artifact("embedding_index", "index", out_ / "eval" / "embedding_index.json");

  std::vector<std::string> conditions = p1_conditions();
  for (const auto& c : p2_conditions())
    if (file_exists(checkpoint_path(c, config_.seeds.front())))
      conditions.push_back(c);

  for (const auto& condition : conditions) {
    std::vector<std::pair<uint64_t, std::filesystem::path>> checkpoints;
    for (const uint64_t seed : config_.seeds) {
      require_artifact(checkpoint_path(condition, seed),
                       condition.find("_ds") != std::string::npos ||
                               condition.find("_full") != std::string::npos
                           ? "train"
                           : "retrain");
      checkpoints.emplace_back(seed, checkpoint_path(condition, seed));
    }
    const auto seed_models = load_seed_models(checkpoints);
    const auto report =
        evaluate(condition, seed_models, index, config_.rollouts,
                 config_.env_seed_base, config_.max_steps, config_.threads);
    report.save(eval_path(condition));
    record_artifact("eval_" + condition, "eval", eval_path(condition));
  }
}

void Experiment::report() {
  // Regenerable from persisted artifacts alone.
  std::vector<EvalReport> eval_reports;
  std::vector<std::string> conditions = p1_conditions();
  const auto p2 = p2_conditions();
  conditions.insert(conditions.end(), p2.begin(), p2.end());
  for (const auto& condition : conditions)
    if (file_exists(eval_path(condition)))
      eval_reports.push_back(EvalReport::load(eval_path(condition)));
  if (eval_reports.empty())
    throw IntegrityError("missing artifact " + eval_path("act_ds").string() +
                         "; run eval first");

  std::vector<FailureScore> scores;
  if (file_exists(scores_path())) scores = load_scores_csv(scores_path());

  std::map<std::string, std::string> failure_modes;
  if (file_exists(demos_path())) {
    for (const auto& d : load_demonstrations(demos_path()))
      if (d.label == Label::kFailure)
        failure_modes[d.demo_id] = to_string(d.failure_mode);
  }

  std::vector<PcaScatter> scatters;
  auto add_pb_scatter = [&](const std::string& condition, const std::string& name) {
    const auto ckpt_path = checkpoint_path(condition, config_.seeds.front());
    if (!file_exists(ckpt_path)) return;
    const auto ckpt = load_checkpoint(ckpt_path);
    if (ckpt.pb_table_ref.empty()) return;
    const PbTable table = load_checkpoint_pb_table(ckpt_path, ckpt);
    std::vector<std::pair<std::string, std::vector<double>>> vectors;
    PcaScatter scatter;
    scatter.name = name;
    for (const auto& id : table.ids()) {
      const auto vals = table.lookup(id).matrix.values();
      vectors.emplace_back(id, std::vector<double>(vals.begin(), vals.end()));
      scatter.point_class[id] = to_string(table.label_of(id));
    }
    if (vectors.size() < 2) return;
    scatter.pca = pca_project(vectors, 2);
    scatters.push_back(std::move(scatter));
  };
  add_pb_scatter("proposed_full", "pb_pca_full");
  add_pb_scatter("proposed_low", "pb_pca_kl_low");

  // Retrieval illustration: stored success embeddings plus the first
  // rollouts' query points, linked to their retrieved PBs.
  const auto index_path = out_ / "eval" / "embedding_index.json";
  const auto full_eval_path = eval_path("proposed_full");
  if (file_exists(index_path) && file_exists(full_eval_path)) {
    const auto index = EmbeddingIndex::load(index_path);
    const auto eval_report = EvalReport::load(full_eval_path);
    PcaScatter scatter;
    scatter.name = "retrieval_embedding";
    std::vector<std::pair<std::string, std::vector<double>>> vectors;
    for (const auto& e : index.entries()) {
      vectors.emplace_back(e.demo_id, e.embedding);
      scatter.point_class[e.demo_id] = "success";
    }
    if (!eval_report.logs.empty()) {
      const auto& entries = eval_report.logs.front().second;
      const size_t n_queries = std::min<size_t>(entries.size(), 12);
      for (size_t i = 0; i < n_queries; ++i) {
        const auto& e = entries[i];
        const WorldState start = make_initial_state(e.object_x, e.object_y);
        Observation obs = observe(start);
        double norm = 0.0;
        for (double v : obs.state) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : obs.state) v /= norm;
        const std::string qid = "query" + std::to_string(e.rollout_index);
        vectors.emplace_back(qid, obs.state);
        scatter.point_class[qid] = "query";
        scatter.edges.emplace_back(qid, e.pb_id);
      }
    }
    if (vectors.size() >= 2) {
      scatter.pca = pca_project(vectors, 2);
      scatters.push_back(std::move(scatter));
    }
  }

  const auto files =
      emit_report(eval_reports, scores, failure_modes, scatters, out_ / "report");
  for (const auto& f : files)
    record_artifact("report_" + f.filename().string(), "report", f);
}

void Experiment::run_all() {
  gen_data();
  train_p1();
  score_failures();
  select_subsets();
  retrain();
  eval_all();
  report();
}

void Experiment::run_command(const std::string& command) {
  if (command == "gen-data") return gen_data();
  if (command == "train") return train_p1();
  if (command == "score-failures") return score_failures();
  if (command == "select") return select_subsets();
  if (command == "retrain") return retrain();
  if (command == "eval") return eval_all();
  if (command == "report") return report();
  if (command == "run-all") return run_all();
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace pbact
