#pragma once
// Text-derived characteristic bank: per hierarchy level, a fixed set of visual
// characteristics, each carrying 4 natural-language descriptions and their
// embeddings. The per-characteristic embedding is the L2-normalized mean of
// its 4 raw description embeddings. A deterministic pseudo text encoder stands
// in for a real language-image encoder so everything runs hermetically.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hierssl/core.hpp"

namespace hierssl {

inline constexpr int kDescriptionsPerCharacteristic = 4;
inline constexpr int kStandardCharsPerLevel = 128;

struct CharacteristicEntry {
  int id = 0;
  std::string name;
  std::array<std::string, kDescriptionsPerCharacteristic> descriptions;
};

struct TextBank {
  int dim = 0;
  int chars_per_level = kStandardCharsPerLevel;
  std::array<std::vector<CharacteristicEntry>, kLevelCount> entries;
  // raw[level]: (chars_per_level * 4) x dim description embeddings, row-major,
  // four consecutive rows per characteristic.
  std::array<Mat, kLevelCount> raw;
  // chars[level]: chars_per_level x dim, unit rows (f32 grid).
  std::array<Mat, kLevelCount> chars;

  // Rebuild chars from raw; error on degenerate characteristics whose
  // description embeddings average to (near) zero.
  void recompute_char_embeddings();
  void validate() const;
};

// Two-stage prompt templates for eliciting the bank from a language model:
// stage 1 asks for level-specific characteristics, stage 2 asks for exactly 4
// descriptions of each. Emitted as text only; no network calls anywhere.
std::vector<std::string> llm_prompt_templates(Level level, const std::string& dataset);

// Deterministic stand-in for a text encoder: hash the text into a seed, draw a
// gaussian vector, normalize. Distinct texts land nearly orthogonal in high dim.
Vec pseudo_text_encode(const std::string& text, int dim, uint64_t seed);

// normalize(mean of the 4 raw description embeddings) for one characteristic.
Vec characteristic_embedding(const TextBank& bank, Level level, int char_id);

// Fully synthetic bank: templated characteristic names/descriptions embedded
// with the pseudo encoder. Hermetic substitute for the LLM + encoder pipeline.
TextBank make_synthetic_bank(int dim, int chars_per_level, uint64_t seed,
                             const std::string& dataset = "synthetic");

void save_bank(const TextBank& bank, const std::filesystem::path& dir);
// Strict loads require the standard characteristic count (128) unless
// allow_any_count is set.
TextBank load_bank(const std::filesystem::path& dir, bool allow_any_count = false);

}  // namespace hierssl
