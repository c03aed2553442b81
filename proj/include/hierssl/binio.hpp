#pragma once
// Binary + JSON file helpers. All float blobs are little-endian float32,
// encoded byte-by-byte so the files are identical on any host.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "hierssl/core.hpp"

namespace hierssl {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string to_hex(uint64_t v);

// Whole-file read/write.
std::string read_file_bytes(const std::filesystem::path& p, const char* module);
void write_file_bytes(const std::filesystem::path& p, const std::string& bytes, const char* module);
std::string file_hash_hex(const std::filesystem::path& p, const char* module);

// Append float32 little-endian encodings of `n` doubles to `out`.
void append_f32_le(std::string& out, const double* data, size_t n);
// Decode `n` float32 values starting at bytes[offset]; widens to double.
void decode_f32_le(const std::string& bytes, size_t offset, double* out, size_t n);

// f32 blob files. `expected` is the element count the caller requires.
void write_f32_blob(const std::filesystem::path& p, const std::vector<const Vec*>& parts,
                    const char* module);
Vec read_f32_blob(const std::filesystem::path& p, size_t expected, const char* module);

}  // namespace hierssl
