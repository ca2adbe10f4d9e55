#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pbact/env.hpp"
#include "pbact/types.hpp"

namespace pbact {

class Rng;

/// One labeled trajectory. Labels always come from replaying the recorded
/// actions through the environment, never from the generating script's
/// intent.
struct Demonstration {
  std::string demo_id;
  Label label = Label::kFailure;
  FailureMode failure_mode = FailureMode::kNone;
  WorldState initial_state;
  std::vector<Observation> observations;       // one per step, pre-action
  std::vector<std::vector<double>> actions;    // same length, 3 components
};

/// Declarative training-set description: which demos, and where the failure
/// selection came from.
struct DatasetManifest {
  std::vector<std::string> success_ids;
  std::vector<std::string> failure_ids;
  std::string strategy = "generated";  // generated | random | kl_low | kl_mid | kl_high
  std::string scores_hash;             // hash of the scores file, when selection-derived
  uint64_t selection_seed = 0;         // random strategy only

  std::vector<std::string> all_ids() const;
  size_t size() const { return success_ids.size() + failure_ids.size(); }

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Mix of failure modes for dataset generation, fractions summing to 1.
struct FailureMix {
  double miss = 0.4;
  double early_release = 0.3;
  double wander = 0.3;
};

/// Scripted-demonstrator dataset: n_success clean lifts plus n_failure
/// perturbed trajectories split across the three failure modes. Every demo
/// is re-verified against the lift rule by replay and labeled by ground
/// truth; a perturbation that accidentally succeeds is retried with a fresh
/// perturbation (bounded retries, then an error). Deterministic given seed.
std::pair<std::vector<Demonstration>, DatasetManifest> generate_dataset(
    int n_success, int n_failure, const FailureMix& mix, uint64_t seed,
    int episode_steps);

/// Replays a demo's actions from its initial state; returns the state after
/// every action (size == actions.size()).
std::vector<WorldState> replay(const Demonstration& demo);

// Line-delimited JSON persistence (one demo per line, byte-stable).
void save_demonstrations(const std::filesystem::path& path,
                         const std::vector<Demonstration>& demos);
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path);

/// Id -> demo lookup used by training, scoring, and evaluation.
std::map<std::string, const Demonstration*> index_demonstrations(
    const std::vector<Demonstration>& demos);

}  // namespace pbact
