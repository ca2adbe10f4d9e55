// pbact: end-to-end driver for the failure-data selection experiments.
//
// Pipeline commands mirror the experiment phases:
//   gen-data -> train -> score-failures -> select -> retrain -> eval -> report
// run-all executes the whole sequence; verify checks the artifact index.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pbact/config.hpp"
#include "pbact/errors.hpp"
#include "pbact/experiment.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  bool verify = false;
};

pbact::ExperimentConfig resolve_config(const GlobalArgs& args) {
  pbact::ExperimentConfig config;
  if (!args.config_path.empty())
    config = pbact::ExperimentConfig::load(args.config_path);
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  if (!args.seeds.empty()) {
    config.seeds.clear();
    std::istringstream in(args.seeds);
    std::string part;
    while (std::getline(in, part, ','))
      config.seeds.push_back(std::stoull(part));
  }
  config.validate();
  return config;
}

int run_verify(pbact::Experiment& experiment) {
  std::ostringstream diagnostics;
  if (experiment.verify(diagnostics)) {
    std::cout << "verify: index clean\n";
    return 0;
  }
  std::cerr << "error: integrity-error: " << diagnostics.str();
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parametric-bias action chunking policy with KL-based failure selection"};
  app.require_subcommand(0, 1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "Experiment config file (ini)");
  app.add_option("--out", args.out_dir, "Output directory (overrides config)");
  app.add_option("--seeds", args.seeds, "Comma-separated training seeds (overrides config)");
  app.add_flag("--verify", args.verify, "Check the experiment index for dangling artifacts");

  const std::vector<std::string> pipeline = {
      "gen-data", "train", "score-failures", "retrain", "eval", "report", "run-all"};
  for (const auto& name : pipeline)
    app.add_subcommand(name)->fallthrough();

  auto* select_cmd = app.add_subcommand("select");
  select_cmd->fallthrough();
  std::string strategy;
  int subset_size = -1;
  select_cmd->add_option("--strategy", strategy,
                         "random|kl_low|kl_mid|kl_high (default: build all plans)")
      ->check(CLI::IsMember({"random", "kl_low", "kl_mid", "kl_high"}));
  select_cmd->add_option("--subset-size", subset_size, "Failures per subset");

  auto* verify_cmd = app.add_subcommand("verify");
  verify_cmd->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    pbact::ExperimentConfig config = resolve_config(args);
    pbact::Experiment experiment(config, config.out_dir);

    std::string command;
    for (const auto& name : pipeline)
      if (app.got_subcommand(name)) command = name;

    if (app.got_subcommand(verify_cmd)) return run_verify(experiment);

    if (app.got_subcommand(select_cmd)) {
      const int size = subset_size >= 0 ? subset_size : config.subset_size;
      if (size == 0)
        std::cerr << "warning: subset size 0 produces a success-only manifest\n";
      if (strategy.empty())
        experiment.select_subsets();
      else
        experiment.select_one(strategy, size);
    } else if (!command.empty()) {
      experiment.run_command(command);
    } else if (!args.verify) {
      std::cerr << "error: usage-error: no command given (see --help)\n";
      return 1;
    }

    if (args.verify) return run_verify(experiment);
    return 0;
  } catch (const pbact::Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: unexpected: " << e.what() << "\n";
    return 1;
  }
}
