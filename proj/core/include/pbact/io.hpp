#pragma once

#include <filesystem>
#include <string>

namespace pbact {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path);

/// Writes content, creating parent directories as needed.
void write_text_file(const fs::path& path, const std::string& content);

bool file_exists(const fs::path& path);

/// FNV-1a hash of a file's bytes, rendered as 16 hex chars.
std::string file_hash_hex(const fs::path& path);

std::string hash_hex(const std::string& content);

}  // namespace pbact
