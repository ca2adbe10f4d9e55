#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pbact/dataset.hpp"
#include "pbact/model.hpp"
#include "pbact/select.hpp"

namespace pbact {

/// Unit-norm embeddings of the initial observations of SUCCESS demos only;
/// the retrieval store consulted at inference time.
class EmbeddingIndex {
 public:
  struct Entry {
    std::string demo_id;
    std::vector<double> embedding;  // unit L2 norm
  };

  static EmbeddingIndex build(const std::vector<const Demonstration*>& success_demos);

  /// Argmax cosine similarity; ties go to the lexicographically smallest id.
  struct Match {
    std::string demo_id;
    double similarity = 0.0;
  };
  Match retrieve(const Observation& query) const;

  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  std::string to_json() const;
  static EmbeddingIndex from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;  // sorted by demo_id
};

/// Retrieval-based PB selection: nearest stored success by cosine similarity;
/// returns that demo's PB from the table.
struct RetrievedPb {
  std::string demo_id;
  const ParametricBias* pb = nullptr;
  double similarity = 0.0;
};
RetrievedPb retrieve_pb(const Observation& initial_obs, const EmbeddingIndex& index,
                        const PbTable& pb_table);

/// Closed-loop episode: decode a chunk, execute it open-loop, re-plan; ends
/// early once the object clears the lift threshold.
struct RolloutResult {
  bool success = false;
  std::vector<WorldState> trajectory;  // state after every executed step
};
RolloutResult rollout(const PolicyModel& model, const ParametricBias* pb,
                      const WorldState& initial_state, int max_steps);

struct RolloutLogEntry {
  int rollout_index = 0;
  double object_x = 0.0;
  double object_y = 0.0;
  std::string pb_id;          // empty for no-PB models
  double similarity = 0.0;
  bool success = false;
};

struct EvalReport {
  std::string condition;
  int rollouts_per_seed = 0;
  uint64_t env_seed_base = 0;
  std::vector<std::pair<uint64_t, double>> per_seed_rates;  // seed-sorted
  double mean_rate = 0.0;
  double stddev_rate = 0.0;  // sample std (n-1); 0 when a single seed
  std::vector<std::pair<uint64_t, std::vector<RolloutLogEntry>>> logs;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static EvalReport load(const std::filesystem::path& path);
};

/// n_rollouts fresh initial states derived from env_seed_base — identical
/// across seeds and across conditions, so comparisons are paired. Models
/// with PB retrieve a success PB per rollout (asserted success-labeled).
EvalReport evaluate(const std::string& condition,
                    const std::vector<SeedModel>& seed_models,
                    const EmbeddingIndex& index, int n_rollouts,
                    uint64_t env_seed_base, int max_steps, int threads = 0);

}  // namespace pbact
