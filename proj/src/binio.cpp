#include "hierssl/binio.hpp"

#include <fstream>

namespace hierssl {

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string read_file_bytes(const std::filesystem::path& p, const char* module) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(module, "cannot open file for reading: " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(module, "read failed: " + p.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& p, const std::string& bytes,
                      const char* module) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(module, "cannot open file for writing: " + p.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) fail(module, "write failed: " + p.string());
}

std::string file_hash_hex(const std::filesystem::path& p, const char* module) {
  return to_hex(fnv1a64(read_file_bytes(p, module)));
}

void append_f32_le(std::string& out, const double* data, size_t n) {
  size_t base = out.size();
  out.resize(base + 4 * n);
  for (size_t i = 0; i < n; ++i) {
    float f = float(data[i]);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    out[base + 4 * i + 0] = char(u & 0xff);
    out[base + 4 * i + 1] = char((u >> 8) & 0xff);
    out[base + 4 * i + 2] = char((u >> 16) & 0xff);
    out[base + 4 * i + 3] = char((u >> 24) & 0xff);
  }
}

void decode_f32_le(const std::string& bytes, size_t offset, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    size_t o = offset + 4 * i;
    uint32_t u = uint32_t(uint8_t(bytes[o])) | uint32_t(uint8_t(bytes[o + 1])) << 8 |
                 uint32_t(uint8_t(bytes[o + 2])) << 16 | uint32_t(uint8_t(bytes[o + 3])) << 24;
    float f;
    std::memcpy(&f, &u, 4);
    out[i] = double(f);
  }
}

void write_f32_blob(const std::filesystem::path& p, const std::vector<const Vec*>& parts,
                    const char* module) {
  std::string bytes;
  size_t total = 0;
  for (const Vec* v : parts) total += v->size();
  bytes.reserve(4 * total);
  for (const Vec* v : parts) append_f32_le(bytes, v->data(), v->size());
  write_file_bytes(p, bytes, module);
}

Vec read_f32_blob(const std::filesystem::path& p, size_t expected, const char* module) {
  std::string bytes = read_file_bytes(p, module);
  if (bytes.size() != 4 * expected)
    fail(module, "blob size mismatch for " + p.string() + ": expected " +
                     std::to_string(4 * expected) + " bytes (" + std::to_string(expected) +
                     " f32 values), found " + std::to_string(bytes.size()));
  Vec out(expected);
  decode_f32_le(bytes, 0, out.data(), expected);
  return out;
}

}  // namespace hierssl
