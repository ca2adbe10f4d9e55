#pragma once

#include <filesystem>
#include <string>

#include "pbact/model.hpp"

namespace pbact {

/// Binary checkpoint: versioned header (format version, PolicyConfig, seed,
/// PB-table reference) followed by named little-endian parameter blobs.
/// Loading a file with a different format version is an error.
void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model,
                     uint64_t seed, const std::string& pb_table_ref);

struct LoadedCheckpoint {
  PolicyModel model;
  uint64_t seed = 0;
  std::string pb_table_ref;  // path relative to the checkpoint's directory
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Loads the PB table referenced by a checkpoint (resolved relative to the
/// checkpoint file).
PbTable load_checkpoint_pb_table(const std::filesystem::path& checkpoint_path,
                                 const LoadedCheckpoint& ckpt);

}  // namespace pbact
