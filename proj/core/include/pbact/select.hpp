#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pbact/dataset.hpp"
#include "pbact/model.hpp"

namespace pbact {

/// Attention-discrepancy score of one failure demo: per-seed K(f) plus the
/// seed-averaged mean used for ranking.
struct FailureScore {
  std::string demo_id;
  std::vector<std::pair<uint64_t, double>> per_seed;  // (seed, K(f)), seed-sorted
  double mean = 0.0;
  int rank = 0;  // 1-based, ascending mean, ties broken by demo_id
};

/// Which failures to keep for retraining and where that choice came from.
struct SelectionPlan {
  std::string strategy;  // random | kl_low | kl_mid | kl_high
  int subset_size = 0;
  std::vector<std::string> selected_ids;  // sorted
  std::string scores_ref;                 // provenance (scores file hash)
  uint64_t rng_seed = 0;                  // random strategy only

  std::string to_json() const;
  static SelectionPlan from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static SelectionPlan load(const std::filesystem::path& path);
};

/// K(f): for every success s in the checkpoint's table, decode the failure's
/// observation windows twice (own PB as positive, s's PB as negative),
/// average the per-window symmetrized trace divergence, and sum over
/// successes with a correctly-rounded final sum. One window per
/// non-overlapping chunk along the trajectory.
double score_failure(const Demonstration& failure, const PolicyModel& model,
                     const PbTable& pb_table);

/// One trained run's artifacts, in memory, for scoring.
struct SeedModel {
  uint64_t seed = 0;
  PolicyModel model;
  PbTable pb_table;
};

/// Loads (seed -> checkpoint path) pairs; a missing checkpoint fails naming
/// the seed.
std::vector<SeedModel> load_seed_models(
    const std::vector<std::pair<uint64_t, std::filesystem::path>>& checkpoints);

/// Per-seed K(f) for every failure, seed-averaged mean, ascending rank.
/// Parallel over (failure, seed) pairs; results do not depend on scheduling.
std::vector<FailureScore> score_all(
    const std::vector<const Demonstration*>& failures,
    const std::vector<SeedModel>& seed_models, int threads = 0);

/// Sorts ascending by mean (ties: lexicographic demo_id) and assigns 1-based
/// ranks in place.
void rank_scores(std::vector<FailureScore>& scores);

/// kl_low takes ranks 1..n, kl_high the top n, kl_mid the size-n window
/// starting at rank ceil((N-n)/2)+1, random draws uniformly without
/// replacement (seeded). subset_size 0 yields a degenerate success-only plan.
SelectionPlan build_plan(const std::vector<FailureScore>& scores,
                         const std::string& strategy, int subset_size,
                         std::optional<uint64_t> rng_seed = std::nullopt);

/// Disjoint random subsets (shuffle once, slice), for the random baseline.
std::vector<SelectionPlan> build_random_partition(
    const std::vector<FailureScore>& scores, int n_subsets, int subset_size,
    uint64_t seed);

/// All base successes plus the plan's failures, with provenance embedded.
/// Overlapping ids are an integrity error.
DatasetManifest reconstruct_manifest(const DatasetManifest& base_success_manifest,
                                     const SelectionPlan& plan);

void save_scores_csv(const std::filesystem::path& path,
                     const std::vector<FailureScore>& scores);
std::vector<FailureScore> load_scores_csv(const std::filesystem::path& path);

/// Mean trace divergence between success-PB and failure-PB attention over
/// shared probe observations (all success x failure pairs). The separation
/// diagnostic tracked across training.
double mean_cross_label_divergence(const PolicyModel& model, const PbTable& table,
                                   const std::vector<Observation>& probes);

}  // namespace pbact
