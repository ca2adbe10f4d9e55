#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pbact/dataset.hpp"
#include "pbact/losses.hpp"
#include "pbact/model.hpp"

namespace pbact {

inline constexpr double kGradClipNorm = 1.0;

/// Everything recorded about one optimization run.
struct TrainRunRecord {
  std::string run_id;
  std::string manifest_ref;
  PolicyConfig config;
  uint64_t seed = 0;
  std::vector<LossBreakdown> history;  // one entry per epoch
  std::string checkpoint_path;
  double wall_clock_seconds = 0.0;
  int clip_events = 0;
  bool kl_active = false;

  std::string to_json() const;
  static TrainRunRecord from_json(const std::string& text);
};

/// One (step index, batch demo id, negative demo id) sampling event; kept
/// when TrainOptions::debug_sampling_log is set so tests can audit the
/// label-conditional negative draw.
struct NegativeSampleEvent {
  int64_t step = 0;
  std::string demo_id;
  std::string negative_id;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no artifacts are written
  std::string run_id = "run";
  std::string manifest_ref;
  bool debug_sampling_log = false;
};

struct TrainResult {
  TrainRunRecord record;
  PolicyModel model;
  PbTable pb_table;  // empty when the config disables PB
  std::vector<NegativeSampleEvent> sampling_log;
};

/// Joint optimization of model weights and the per-demo PB table on the
/// manifest's demos: per batch element, a forward with its own PB gives the
/// action loss and the positive trace; a second decode of the same memory
/// with a sampled opposite-label PB gives the negative trace for the KL
/// regularizer. The KL term is silently disabled when either label class is
/// absent from the manifest. Deterministic given config.seed.
TrainResult train(const std::vector<Demonstration>& demos,
                  const DatasetManifest& manifest, const PolicyConfig& config,
                  const TrainOptions& options);

struct MultiSeedOptions {
  std::filesystem::path base_dir;  // run k writes under base_dir/"seed<k>"
  std::string run_id_prefix = "run";
  std::string manifest_ref;
  int threads = 0;  // 0 = hardware concurrency
};

/// Independent runs, one per seed (seeds must be distinct); executes
/// concurrently and propagates the first failure with seed attribution.
std::vector<TrainRunRecord> train_multi_seed(
    const std::vector<Demonstration>& demos, const DatasetManifest& manifest,
    const PolicyConfig& base_config, const std::vector<uint64_t>& seeds,
    const MultiSeedOptions& options);

/// Epoch-level metrics CSV (columns: epoch,l_act,l_kl,total,lambda_kl).
void save_metrics_csv(const std::filesystem::path& path,
                      const std::vector<LossBreakdown>& history);
std::vector<LossBreakdown> load_metrics_csv(const std::filesystem::path& path);

}  // namespace pbact
