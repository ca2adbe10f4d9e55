#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pbact/dataset.hpp"
#include "pbact/model.hpp"

namespace pbact {

/// Full experiment description parsed from one sectioned key=value config
/// file. Every key has a default; unknown sections or keys are rejected.
struct ExperimentConfig {
  // [data]
  int n_success = 50;
  int n_failure = 50;
  FailureMix failure_mix;
  int episode_steps = 60;
  uint64_t data_seed = 1;

  // [model]
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int chunk = 20;
  int obs_tokens = 2;
  int ffn_dim = 256;
  int d_pb = kDefaultPbDim;
  double alpha_pb = 0.1;

  // [train]
  double lambda_kl = 0.01;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  int epochs = 300;
  int batch_size = 10;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};

  // [selection]
  int subset_size = 10;
  int random_subsets = 5;
  uint64_t selection_seed = 77;

  // [eval]
  int rollouts = 100;
  uint64_t env_seed_base = 9000;
  int max_steps = 60;

  // [run]
  int threads = 0;  // 0 = hardware concurrency
  std::string out_dir = "out";
  bool retrain_act_baselines = false;

  /// PolicyConfig for one run of one condition.
  PolicyConfig policy(bool use_pb, uint64_t seed) const;

  void validate() const;

  /// Canonical echo of the resolved configuration (parse(to_ini_text())
  /// round-trips).
  std::string to_ini_text() const;

  static ExperimentConfig parse(const std::string& ini_text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace pbact
