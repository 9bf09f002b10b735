#pragma once

#include "semapop/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace semapop {

// FNV-1a 64-bit; content hashing for provenance and cache keys.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
std::uint64_t hash_file(const std::filesystem::path& path);

// Shortest round-trip decimal representation (std::to_chars).
std::string format_real(double v);

std::vector<std::string> split_csv_line(const std::string& line);

// Flat little-endian float32 tensor files with a JSON shape sidecar
// ("<path>.json" holding {"rows":R,"cols":C}).
void write_f32_tensor(const std::filesystem::path& path, const Matrix& m);
Matrix read_f32_tensor(const std::filesystem::path& path);

// Round every entry through float32; storage precision of tensor files.
Matrix quantize_f32(const Matrix& m);

// Advisory lock file held for the lifetime of the object.
class DirectoryLock {
  public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

  private:
    std::filesystem::path lock_path_;
};

} // namespace semapop
