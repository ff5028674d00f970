#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cotlab {

// whole-file helpers; writes go through a temp file + rename so readers never
// observe a partially written artifact
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
void ensure_dir(const std::filesystem::path& dir);

// SHA-256 hex digest
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

} // namespace cotlab
