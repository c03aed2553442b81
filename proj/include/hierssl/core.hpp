#pragma once
// Shared small types: vectors, row-major matrices, hierarchy levels, error helper.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hierssl {

using Vec = std::vector<double>;

// Hierarchy levels, in the order used by every on-disk layout.
enum class Level : int { Patient = 0, Slide = 1, Patch = 2 };
inline constexpr int kLevelCount = 3;
inline constexpr Level kLevels[kLevelCount] = {Level::Patient, Level::Slide, Level::Patch};

inline const char* level_name(Level lv) {
  switch (lv) {
    case Level::Patient: return "patient";
    case Level::Slide: return "slide";
    default: return "patch";
  }
}

[[noreturn]] inline void fail(const std::string& module, const std::string& msg) {
  throw std::runtime_error("[" + module + "] " + msg);
}

inline Level level_from_name(const std::string& s) {
  for (Level lv : kLevels)
    if (s == level_name(lv)) return lv;
  fail("core", "unknown level name: " + s);
}

// Dense row-major matrix of doubles.
struct Mat {
  int rows = 0, cols = 0;
  Vec a;
  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(size_t(r) * size_t(c), 0.0) {}
  double& at(int r, int c) { return a[size_t(r) * cols + c]; }
  double at(int r, int c) const { return a[size_t(r) * cols + c]; }
  double* row(int r) { return a.data() + size_t(r) * cols; }
  const double* row(int r) const { return a.data() + size_t(r) * cols; }
  size_t size() const { return a.size(); }
};

// Round to the nearest float32. Trainer state lives on the f32 grid so the
// float32 checkpoint blobs are lossless and resume is bit-exact.
inline double q32(double x) { return double(float(x)); }
inline void q32_all(Vec& v) {
  for (double& x : v) x = double(float(x));
}

inline bool all_finite(const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}
inline bool all_finite(const Vec& v) { return all_finite(v.data(), v.size()); }

inline double dot(const double* x, const double* y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}
inline double norm2(const double* x, int n) { return std::sqrt(dot(x, x, n)); }
inline double norm2(const Vec& v) { return norm2(v.data(), int(v.size())); }

// In-place L2 normalization; error if the vector is numerically zero.
inline void normalize(Vec& v, const char* module, const std::string& what) {
  double n = norm2(v);
  if (!(n > 1e-12)) fail(module, "cannot normalize zero-norm vector: " + what);
  double inv = 1.0 / n;
  for (double& x : v) x *= inv;
}

}  // namespace hierssl
