#include "pbact/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pbact/errors.hpp"

namespace pbact {

namespace {

constexpr char kMagic[8] = {'P', 'B', 'A', 'C', 'T', 'C', 'K', 'P'};
constexpr uint32_t kFormatVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

void read_bytes(std::istream& in, void* p, size_t n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw IoError("checkpoint: truncated file");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model,
                     uint64_t seed, const std::string& pb_table_ref) {
  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string());

  nlohmann::json header;
  header["config"] = nlohmann::json::parse(model.config().to_json());
  header["seed"] = seed;
  header["pb_table_ref"] = pb_table_ref;
  const std::string header_text = header.dump();

  write_bytes(out, kMagic, sizeof(kMagic));
  write_u32(out, kFormatVersion);
  write_u32(out, static_cast<uint32_t>(header_text.size()));
  write_bytes(out, header_text.data(), header_text.size());

  const auto& params = model.named_parameters();
  write_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    write_bytes(out, name.data(), name.size());
    write_u32(out, static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_u32(out, static_cast<uint32_t>(d));
    write_bytes(out, t.values().data(), t.values().size() * sizeof(double));
  }
  out.close();
  if (out.fail()) throw IoError("checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());

  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IntegrityError("checkpoint: bad magic in " + path.string());
  const uint32_t version = read_u32(in);
  if (version != kFormatVersion)
    throw IntegrityError("checkpoint: format version " + std::to_string(version) +
                         " unsupported (expected " + std::to_string(kFormatVersion) + ")");

  const uint32_t header_len = read_u32(in);
  std::string header_text(header_len, '\0');
  read_bytes(in, header_text.data(), header_len);
  nlohmann::json header = nlohmann::json::parse(header_text);

  PolicyConfig config = PolicyConfig::from_json(header.at("config").dump());
  const uint64_t seed = header.at("seed").get<uint64_t>();
  const std::string pb_ref = header.at("pb_table_ref").get<std::string>();

  // Rebuild with the recorded init; parameter blobs then overwrite values.
  LoadedCheckpoint result{PolicyModel(config, 0), seed, pb_ref};

  const uint32_t n_params = read_u32(in);
  if (n_params != result.model.named_parameters().size())
    throw IntegrityError("checkpoint: parameter count mismatch in " + path.string());
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    read_bytes(in, name.data(), name_len);
    const uint32_t rank = read_u32(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(in));
    Tensor t = result.model.param(name);
    if (t.shape() != shape)
      throw IntegrityError("checkpoint: shape mismatch for parameter '" + name + "'");
    auto dst = t.mutable_values();
    read_bytes(in, dst.data(), dst.size() * sizeof(double));
  }
  return result;
}

PbTable load_checkpoint_pb_table(const std::filesystem::path& checkpoint_path,
                                 const LoadedCheckpoint& ckpt) {
  if (ckpt.pb_table_ref.empty())
    throw IntegrityError("checkpoint has no PB table reference");
  return PbTable::load(checkpoint_path.parent_path() / ckpt.pb_table_ref);
}

}  // namespace pbact
