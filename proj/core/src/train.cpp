#include "pbact/train.hpp"

#include <algorithm>
#include <chrono>
#include <unordered_set>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pbact/checkpoint.hpp"
#include "pbact/errors.hpp"
#include "pbact/io.hpp"
#include "pbact/numerics.hpp"
#include "pbact/optim.hpp"
#include "pbact/parallel.hpp"
#include "pbact/rng.hpp"

namespace pbact {

using nlohmann::json;

std::string TrainRunRecord::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["manifest_ref"] = manifest_ref;
  j["config"] = json::parse(config.to_json());
  j["seed"] = seed;
  j["epochs_recorded"] = history.size();
  j["checkpoint_path"] = checkpoint_path;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["clip_events"] = clip_events;
  j["kl_active"] = kl_active;
  if (!history.empty()) {
    j["final_l_act"] = history.back().l_act;
    j["final_l_kl"] = history.back().l_kl;
    j["final_total"] = history.back().total;
  }
  return j.dump(2) + "\n";
}

TrainRunRecord TrainRunRecord::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainRunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.manifest_ref = j.at("manifest_ref").get<std::string>();
  r.config = PolicyConfig::from_json(j.at("config").dump());
  r.seed = j.at("seed").get<uint64_t>();
  r.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  r.clip_events = j.at("clip_events").get<int>();
  r.kl_active = j.at("kl_active").get<bool>();
  return r;
}

namespace {

// rng streams hanging off config.seed
constexpr uint64_t kInitStream = 0;
constexpr uint64_t kShuffleStream = 1;

void fisher_yates(std::vector<const Demonstration*>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

Tensor chunk_target(const Demonstration& demo, int t, int chunk, int action_dim) {
  std::vector<double> vals;
  vals.reserve(static_cast<size_t>(chunk) * action_dim);
  for (int i = 0; i < chunk; ++i) {
    const auto enc = action_to_model(EnvAction::from_vector(demo.actions[t + i]));
    vals.insert(vals.end(), enc.begin(), enc.end());
  }
  return Tensor::from({chunk, action_dim}, std::move(vals));
}

}  // namespace

TrainResult train(const std::vector<Demonstration>& demos,
                  const DatasetManifest& manifest, const PolicyConfig& config,
                  const TrainOptions& options) {
  const auto start_time = std::chrono::steady_clock::now();
  config.validate();
  if (manifest.size() == 0) throw ConfigError("train: empty manifest");

  const auto demo_index = index_demonstrations(demos);
  std::vector<const Demonstration*> train_set;
  std::vector<std::pair<std::string, Label>> pb_entries;
  for (const auto& id : manifest.all_ids()) {
    auto it = demo_index.find(id);
    if (it == demo_index.end())
      throw IntegrityError("train: manifest references missing demo '" + id + "'");
    const Demonstration* d = it->second;
    if (static_cast<int>(d->observations.size()) < config.chunk)
      throw ConfigError("train: demo '" + id + "' shorter than one chunk");
    train_set.push_back(d);
    pb_entries.emplace_back(d->demo_id, d->label);
  }

  bool have_success = false, have_failure = false;
  for (const auto* d : train_set) {
    (d->label == Label::kSuccess ? have_success : have_failure) = true;
  }
  // Table 1 footnote behavior: with a single label class the KL term is
  // inactive, not an error.
  const bool kl_active = config.use_pb && config.lambda_kl > 0.0 &&
                         have_success && have_failure;

  PolicyModel model(config, config.seed + kInitStream);
  PbTable pb_table;
  if (config.use_pb)
    pb_table = PbTable(pb_entries, config.chunk, config.d_pb, true);

  AdamW opt(config.learning_rate);
  std::vector<Tensor> model_params;
  for (const auto& [name, t] : model.named_parameters()) {
    opt.register_param(t, config.weight_decay);
    model_params.push_back(t);
  }
  if (config.use_pb) {
    for (const auto& id : pb_table.ids())
      opt.register_param(pb_table.lookup(id).matrix, 0.0);  // no decay on PBs
  }

  Rng rng = Rng::fork(config.seed, kShuffleStream);
  TrainResult result{TrainRunRecord{}, std::move(model), std::move(pb_table), {}};
  TrainRunRecord& record = result.record;
  record.run_id = options.run_id;
  record.manifest_ref = options.manifest_ref;
  record.config = config;
  record.seed = config.seed;
  record.kl_active = kl_active;

  int64_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<const Demonstration*> order = train_set;
    fisher_yates(order, rng);

    std::vector<double> step_l_act, step_l_kl;
    for (size_t batch_start = 0; batch_start < order.size();
         batch_start += config.batch_size) {
      const size_t batch_end =
          std::min(order.size(), batch_start + config.batch_size);
      const size_t batch_n = batch_end - batch_start;

      std::vector<Tensor> act_terms, kl_terms;
      std::vector<Tensor> touched = model_params;
      for (size_t b = batch_start; b < batch_end; ++b) {
        const Demonstration& demo = *order[b];
        // Chunk starts are drawn from the non-overlapping windows the policy
        // actually faces: rollout re-plans every L steps and the failure
        // metric compares the same windows.
        const int n_windows =
            static_cast<int>(demo.observations.size()) / config.chunk;
        const int t = static_cast<int>(rng.uniform_index(n_windows)) * config.chunk;
        const Tensor target = chunk_target(demo, t, config.chunk, config.action_dim);

        Tensor memory = result.model.encode(demo.observations[t]);
        const ParametricBias* pos =
            config.use_pb ? &result.pb_table.lookup(demo.demo_id) : nullptr;
        auto fwd = result.model.decode(memory, pos, TracePolarity::kPositive);
        act_terms.push_back(mean(abs(sub(fwd.chunk, target))));

        if (config.use_pb) touched.push_back(pos->matrix);
        if (kl_active) {
          const ParametricBias& neg =
              result.pb_table.sample_negative(demo.label, rng);
          auto neg_fwd =
              result.model.decode(memory, &neg, TracePolarity::kNegative);
          kl_terms.push_back(kl_regularizer(fwd.trace, neg_fwd.trace));
          touched.push_back(neg.matrix);
          if (options.debug_sampling_log)
            result.sampling_log.push_back({global_step, demo.demo_id, neg.demo_id});
        }
      }

      Tensor l_act = act_terms[0];
      for (size_t i = 1; i < act_terms.size(); ++i) l_act = add(l_act, act_terms[i]);
      l_act = scale(l_act, 1.0 / static_cast<double>(batch_n));

      Tensor objective = l_act;
      double l_kl_value = 0.0;
      if (kl_active) {
        Tensor l_kl = kl_terms[0];
        for (size_t i = 1; i < kl_terms.size(); ++i) l_kl = add(l_kl, kl_terms[i]);
        l_kl = scale(l_kl, 1.0 / static_cast<double>(batch_n));
        l_kl_value = l_kl.item();
        objective = add(l_act, scale(l_kl, config.lambda_kl));
      }

      const LossBreakdown step_loss =
          total_loss(l_act.item(), l_kl_value, config.lambda_kl);
      if (std::fabs(step_loss.l_kl) > kKlAbortThreshold)
        throw NumericError("divergence-abort: |l_kl| = " +
                           std::to_string(std::fabs(step_loss.l_kl)) +
                           " exceeded " + std::to_string(kKlAbortThreshold) +
                           " at step " + std::to_string(global_step));

      backward(objective);
      // Negative PBs can repeat within a batch; dedupe in insertion order so
      // the clip-norm summation order stays deterministic.
      {
        std::unordered_set<const detail::TensorNode*> seen;
        std::vector<Tensor> unique_touched;
        unique_touched.reserve(touched.size());
        for (const Tensor& t : touched)
          if (seen.insert(t.node()).second) unique_touched.push_back(t);
        touched = std::move(unique_touched);
      }
      if (clip_global_grad_norm(touched, kGradClipNorm) > kGradClipNorm)
        ++record.clip_events;
      opt.step(touched);
      for (Tensor& t : touched) t.zero_grad();

      step_l_act.push_back(step_loss.l_act);
      step_l_kl.push_back(step_loss.l_kl);
      ++global_step;
    }

    record.history.push_back(total_loss(exact_mean(step_l_act),
                                        exact_mean(step_l_kl), config.lambda_kl));
  }

  if (!options.out_dir.empty()) {
    const auto dir = options.out_dir;
    std::string pb_ref;
    if (config.use_pb) {
      pb_ref = "pb_table.json";
      result.pb_table.save(dir / pb_ref);
    }
    const auto ckpt_path = dir / "checkpoint.bin";
    save_checkpoint(ckpt_path, result.model, config.seed, pb_ref);
    record.checkpoint_path = ckpt_path.string();
    save_metrics_csv(dir / "metrics.csv", record.history);
  }

  record.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time)
          .count();
  if (!options.out_dir.empty())
    write_text_file(options.out_dir / "run_record.json", record.to_json());
  return result;
}

std::vector<TrainRunRecord> train_multi_seed(
    const std::vector<Demonstration>& demos, const DatasetManifest& manifest,
    const PolicyConfig& base_config, const std::vector<uint64_t>& seeds,
    const MultiSeedOptions& options) {
  if (seeds.empty()) throw ConfigError("train_multi_seed: no seeds");
  for (size_t i = 0; i < seeds.size(); ++i)
    for (size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j])
        throw ConfigError("train_multi_seed: duplicate seed " +
                          std::to_string(seeds[i]));

  std::vector<TrainRunRecord> records(seeds.size());
  parallel_for(seeds.size(), options.threads, [&](size_t i) {
    PolicyConfig config = base_config;
    config.seed = seeds[i];
    TrainOptions run_options;
    run_options.run_id = options.run_id_prefix + "_seed" + std::to_string(seeds[i]);
    run_options.manifest_ref = options.manifest_ref;
    if (!options.base_dir.empty())
      run_options.out_dir = options.base_dir / ("seed" + std::to_string(seeds[i]));
    try {
      records[i] = train(demos, manifest, config, run_options).record;
    } catch (const Error& e) {
      throw Error(e.code(), "seed " + std::to_string(seeds[i]) + ": " + e.what());
    }
  });
  return records;
}

void save_metrics_csv(const std::filesystem::path& path,
                      const std::vector<LossBreakdown>& history) {
  std::ostringstream out;
  out << "epoch,l_act,l_kl,total,lambda_kl\n";
  for (size_t i = 0; i < history.size(); ++i) {
    const auto& b = history[i];
    out << i << "," << format_double(b.l_act) << "," << format_double(b.l_kl)
        << "," << format_double(b.total) << "," << format_double(b.lambda_kl)
        << "\n";
  }
  write_text_file(path, out.str());
}

std::vector<LossBreakdown> load_metrics_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,l_act,l_kl,total,lambda_kl")
    throw IntegrityError("metrics csv: bad header in " + path.string());
  std::vector<LossBreakdown> history;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 5)
      throw IntegrityError("metrics csv: bad row in " + path.string());
    LossBreakdown b;
    b.l_act = std::stod(fields[1]);
    b.l_kl = std::stod(fields[2]);
    b.total = std::stod(fields[3]);
    b.lambda_kl = std::stod(fields[4]);
    history.push_back(b);
  }
  return history;
}

}  // namespace pbact
