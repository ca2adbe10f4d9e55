#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "pbact/config.hpp"
#include "pbact/errors.hpp"
#include "pbact/experiment.hpp"
#include "pbact/io.hpp"

using namespace pbact;

namespace {

std::filesystem::path temp_dir(const std::string& leaf) {
  auto dir = std::filesystem::temp_directory_path() / "pbact_config_test" / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.n_success = 3;
  c.n_failure = 3;
  c.episode_steps = 20;
  c.d_model = 16;
  c.n_heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.chunk = 5;
  c.ffn_dim = 32;
  c.epochs = 3;
  c.batch_size = 3;
  c.seeds = {0, 1};
  c.subset_size = 1;
  c.random_subsets = 2;
  c.rollouts = 2;
  c.max_steps = 20;
  c.learning_rate = 1e-3;
  return c;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty text yields all defaults") {
    const auto c = ExperimentConfig::parse("");
    CHECK(c.n_success == 50);
    CHECK(c.d_model == 64);
    CHECK(c.seeds == std::vector<uint64_t>{0, 1, 2, 3, 4});
    CHECK(c.lambda_kl == 0.01);
    CHECK(c.epochs == 300);
  }

  SUBCASE("sections, comments, and values") {
    const std::string text =
        "# comment\n"
        "[data]\n"
        "n_success = 7   # trailing comment\n"
        "failure_mix = 0.2, 0.3, 0.5\n"
        "\n"
        "[train]\n"
        "seeds = 3,4\n"
        "lambda_kl = 0.5\n";
    const auto c = ExperimentConfig::parse(text);
    CHECK(c.n_success == 7);
    CHECK(c.failure_mix.wander == 0.5);
    CHECK(c.seeds == std::vector<uint64_t>{3, 4});
    CHECK(c.lambda_kl == 0.5);
  }

  SUBCASE("unknown keys are rejected with the line number") {
    try {
      ExperimentConfig::parse("[data]\nn_sucess = 7\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
      CHECK(std::string(e.what()).find("n_sucess") != std::string::npos);
    }
    CHECK_THROWS_AS(ExperimentConfig::parse("[bogus]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[data]\nn_success seven\n"),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[data]\nn_success = seven\n"),
                    ConfigError);
  }

  SUBCASE("validation failures") {
    CHECK_THROWS_AS(ExperimentConfig::parse("[train]\nseeds = 1,1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[eval]\nrollouts = 0\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("[data]\nepisode_steps = 5\n"),
                    ConfigError);
  }

  SUBCASE("resolved echo round-trips") {
    auto c = tiny_experiment();
    const std::string echoed = c.to_ini_text();
    const auto back = ExperimentConfig::parse(echoed);
    CHECK(back.to_ini_text() == echoed);
  }

  SUBCASE("shipped configs parse") {
    // Tests run from the build tree; configs live in the source tree.
    const auto root = std::filesystem::path(__FILE__).parent_path().parent_path();
    CHECK_NOTHROW(ExperimentConfig::load(root / "configs" / "smoke.ini"));
    CHECK_NOTHROW(ExperimentConfig::load(root / "configs" / "full.ini"));
  }
}

TEST_CASE("experiment pipeline end to end (tiny)") {
  const auto out = temp_dir("pipeline");
  Experiment experiment(tiny_experiment(), out);

  SUBCASE("upstream artifact validation fails fast") {
    CHECK_THROWS_AS(experiment.train_p1(), IntegrityError);
    CHECK_THROWS_AS(experiment.score_failures(), IntegrityError);
    CHECK_THROWS_AS(experiment.select_subsets(), IntegrityError);
    CHECK_THROWS_AS(experiment.report(), IntegrityError);
    try {
      experiment.train_p1();
    } catch (const IntegrityError& e) {
      CHECK(std::string(e.what()).find("run gen-data first") != std::string::npos);
    }
  }

  SUBCASE("full pipeline produces the artifact tree and verifies clean") {
    experiment.run_all();

    CHECK(file_exists(out / "dataset" / "demos.jsonl"));
    CHECK(file_exists(out / "dataset" / "manifest_full.json"));
    CHECK(file_exists(out / "runs" / "proposed_full" / "seed0" / "checkpoint.bin"));
    CHECK(file_exists(out / "runs" / "act_ds" / "seed1" / "checkpoint.bin"));
    CHECK(file_exists(out / "scores" / "failure_scores.csv"));
    CHECK(file_exists(out / "dataset" / "manifest_kl_low.json"));
    CHECK(file_exists(out / "runs" / "proposed_low" / "seed0" / "checkpoint.bin"));
    CHECK(file_exists(out / "eval" / "proposed_full.json"));
    CHECK(file_exists(out / "report" / "success_table.csv"));
    CHECK(file_exists(out / "report" / "kbar.csv"));
    CHECK(file_exists(out / "report" / "pb_pca_full.csv"));
    CHECK(file_exists(out / "config.resolved.ini"));

    std::ostringstream diag;
    CHECK(experiment.verify(diag));

    // Reconstructed manifests: every selected failure keeps its label and
    // the success set rides along unchanged.
    const auto manifest = DatasetManifest::load(out / "dataset" / "manifest_kl_low.json");
    CHECK(manifest.success_ids.size() == 3);
    CHECK(manifest.failure_ids.size() == 1);
    CHECK(manifest.strategy == "kl_low");
    CHECK(!manifest.scores_hash.empty());

    SUBCASE("reports regenerate byte-identically") {
      const auto table_before = read_text_file(out / "report" / "success_table.csv");
      const auto kbar_before = read_text_file(out / "report" / "kbar.svg");
      experiment.report();
      CHECK(read_text_file(out / "report" / "success_table.csv") == table_before);
      CHECK(read_text_file(out / "report" / "kbar.svg") == kbar_before);
    }

    SUBCASE("verify flags a dangling artifact") {
      std::filesystem::remove(out / "scores" / "failure_scores.csv");
      std::ostringstream diag2;
      CHECK(!experiment.verify(diag2));
      CHECK(diag2.str().find("failure_scores") != std::string::npos);
    }
  }
}
