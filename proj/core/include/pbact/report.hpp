#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pbact/infer.hpp"
#include "pbact/pca.hpp"
#include "pbact/select.hpp"

namespace pbact {

/// One 2-D projection destined for a scatter plot: point classes drive the
/// coloring (success/failure/query) and edges draw retrieval links.
struct PcaScatter {
  std::string name;
  PcaResult pca;  // k == 2
  std::map<std::string, std::string> point_class;
  std::vector<std::pair<std::string, std::string>> edges;
};

/// Writes the experiment's human-readable outputs: the success-rate table
/// (one row per condition, mean +- std over seeds), the sorted K-metric bar
/// chart, and the requested scatter plots. Emission is deterministic; a
/// rerun over identical inputs is byte-identical.
std::vector<std::filesystem::path> emit_report(
    const std::vector<EvalReport>& eval_reports,
    const std::vector<FailureScore>& scores,
    const std::map<std::string, std::string>& failure_modes,
    const std::vector<PcaScatter>& pca_outputs,
    const std::filesystem::path& out_dir);

}  // namespace pbact
