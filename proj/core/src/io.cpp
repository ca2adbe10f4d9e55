#include "pbact/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pbact/errors.hpp"
#include "pbact/numerics.hpp"

namespace pbact {

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  out.close();
  if (out.fail()) throw IoError("write failed: " + path.string());
}

bool file_exists(const fs::path& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

std::string hash_hex(const std::string& content) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(content)));
  return std::string(buf);
}

std::string file_hash_hex(const fs::path& path) {
  return hash_hex(read_text_file(path));
}

}  // namespace pbact
