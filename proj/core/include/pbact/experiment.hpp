#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "pbact/config.hpp"

namespace pbact {

/// Orchestrates the full experimental protocol against a flat file-based
/// artifact store under out(). Each step validates its upstream artifacts,
/// writes deterministically, and upserts the experiment index, so reruns
/// over identical inputs regenerate identical bytes.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::filesystem::path out_dir);

  const std::filesystem::path& out() const { return out_; }
  const ExperimentConfig& config() const { return config_; }

  /// Scripted dataset + full/success-only manifests.
  void gen_data();
  /// Process-1 conditions: {act, proposed} x {success-only, full}, all seeds.
  void train_p1();
  /// K-metric for every failure from the proposed_full checkpoints.
  void score_failures();
  /// Plans (random x N, kl_low, kl_mid, kl_high) and their manifests.
  void select_subsets();
  /// One plan + manifest for an explicitly requested strategy (CLI --strategy).
  void select_one(const std::string& strategy, int subset_size);
  /// Process-2 retraining on every reconstructed manifest, all seeds.
  void retrain();
  /// Paired evaluation of every trained condition.
  void eval_all();
  /// CSV/SVG report bundle from persisted artifacts only.
  void report();
  /// The full pipeline in order.
  void run_all();

  /// Re-checks the experiment index: every artifact present and hashes
  /// consistent. Returns true when clean; diagnostics name dangling entries.
  bool verify(std::ostream& diagnostics) const;

  /// One CLI command by name (gen-data, train, score-failures, select,
  /// retrain, eval, report, run-all).
  void run_command(const std::string& command);

  // Condition lists (stable order).
  std::vector<std::string> p1_conditions() const;
  std::vector<std::string> p2_conditions() const;

 private:
  struct TrainJob {
    std::string condition;
    std::string manifest_name;
    bool use_pb = true;
    uint64_t seed = 0;
  };

  std::filesystem::path demos_path() const;
  std::filesystem::path manifest_path(const std::string& name) const;
  std::filesystem::path run_dir(const std::string& condition, uint64_t seed) const;
  std::filesystem::path checkpoint_path(const std::string& condition,
                                        uint64_t seed) const;
  std::filesystem::path scores_path() const;
  std::filesystem::path eval_path(const std::string& condition) const;

  void require_artifact(const std::filesystem::path& path,
                        const std::string& produced_by) const;
  void run_train_jobs(const std::vector<TrainJob>& jobs);
  void record_artifact(const std::string& name, const std::string& kind,
                       const std::filesystem::path& path);
  void write_resolved_config();

  ExperimentConfig config_;
  std::filesystem::path out_;
  std::string config_hash_;
};

}  // namespace pbact
