#pragma once
// Deterministic randomness. Every stochastic step in the project draws from an
// Rng seeded through derive_seed(), so corpora, batches and whole training runs
// replay bit-identically from (config, seed) alone.

#include <cmath>
#include <cstdint>
#include <random>

namespace hierssl {

// splitmix64 finalizer: cheap, good avalanche.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent stream id from a base seed plus up to three tags.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag, uint64_t a = 0, uint64_t b = 0) {
  uint64_t h = mix64(seed ^ 0x243f6a8885a308d3ull);
  h = mix64(h ^ tag);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return h;
}

// Stream tags (arbitrary distinct constants).
enum : uint64_t {
  kStreamClassField = 0x11,
  kStreamPatientField = 0x12,
  kStreamSlideField = 0x13,
  kStreamPatchField = 0x14,
  kStreamPixelNoise = 0x15,
  kStreamText = 0x21,
  kStreamModelInit = 0x31,
  kStreamIteration = 0x41,
  kStreamSplit = 0x51,
  kStreamEvalCap = 0x52,
  kStreamMarkers = 0x53,
  kStreamAudit = 0x61,
};

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(mix64(seed)) {}

  uint64_t u64() { return engine_(); }

  // [0,1)
  double uniform() { return double(u64() >> 11) * 0x1.0p-53; }
  // (0,1] — safe for log()
  double uniform_pos() { return double((u64() >> 11) + 1) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine branch only: fixed two draws per normal, no cached state,
  // so the stream is identical no matter how calls interleave with copies.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // unbiased integer in [0,n), n >= 1
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = u64();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;  // output sequence pinned by the standard
};

}  // namespace hierssl
