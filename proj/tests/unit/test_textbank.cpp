#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "hierssl/core.hpp"
#include "hierssl/textbank.hpp"

using namespace hierssl;
namespace fs = std::filesystem;

TEST_CASE("synthetic bank has the standard layout") {
  TextBank bank = make_synthetic_bank(16, kStandardCharsPerLevel, 3);
  bank.validate();
  CHECK(bank.dim == 16);
  CHECK(bank.chars_per_level == 128);
  for (Level lv : kLevels) {
    size_t l = size_t(int(lv));
    CHECK(bank.entries[l].size() == 128);
    CHECK(bank.raw[l].rows == 128 * kDescriptionsPerCharacteristic);
    CHECK(bank.chars[l].rows == 128);
    CHECK(bank.chars[l].cols == 16);
    for (const CharacteristicEntry& e : bank.entries[l])
      for (const std::string& d : e.descriptions) CHECK(!d.empty());
    // characteristic rows are unit vectors on the f32 grid
    for (int r = 0; r < bank.chars[l].rows; ++r) {
      double n2 = 0.0;
      for (int d = 0; d < 16; ++d) n2 += bank.chars[l].at(r, d) * bank.chars[l].at(r, d);
      CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
      for (int d = 0; d < 16; ++d) CHECK(q32(bank.chars[l].at(r, d)) == bank.chars[l].at(r, d));
    }
  }
}

TEST_CASE("characteristic embedding = normalize(mean of its 4 descriptions)") {
  // raw rows e1, e1, e2, e2 -> mean (e1+e2)/2 -> normalized (e1+e2)/sqrt(2)
  TextBank bank = make_synthetic_bank(4, 2, 1);
  size_t l = size_t(int(Level::Patch));
  for (int d = 0; d < 4; ++d)
    for (int c = 0; c < 4; ++c) bank.raw[l].at(d, c) = 0.0;
  bank.raw[l].at(0, 0) = 1.0;
  bank.raw[l].at(1, 0) = 1.0;
  bank.raw[l].at(2, 1) = 1.0;
  bank.raw[l].at(3, 1) = 1.0;
  Vec e = characteristic_embedding(bank, Level::Patch, 0);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(e[0] == q32(r));  // embeddings live on the f32 grid
  CHECK(e[1] == q32(r));
  CHECK(e[2] == doctest::Approx(0.0));
  CHECK(e[3] == doctest::Approx(0.0));
  // recompute_char_embeddings applies the same rule onto the f32 grid
  bank.recompute_char_embeddings();
  CHECK(bank.chars[l].at(0, 0) == q32(r));
  CHECK(bank.chars[l].at(0, 1) == q32(r));
}

TEST_CASE("degenerate descriptions {v,-v,w,-w} are rejected") {
  TextBank bank = make_synthetic_bank(4, 2, 1);
  size_t l = size_t(int(Level::Slide));
  for (int d = 0; d < 4; ++d)
    for (int c = 0; c < 4; ++c) bank.raw[l].at(d, c) = 0.0;
  bank.raw[l].at(0, 0) = 1.0;
  bank.raw[l].at(1, 0) = -1.0;
  bank.raw[l].at(2, 1) = 1.0;
  bank.raw[l].at(3, 1) = -1.0;
  CHECK_THROWS(bank.recompute_char_embeddings());
}

TEST_CASE("pseudo text encoder: unit norm, deterministic, near-orthogonal") {
  Vec a = pseudo_text_encode("cellularity", 64, 7);
  Vec b = pseudo_text_encode("cellularity", 64, 7);
  CHECK(a == b);
  double n2 = 0.0;
  for (double x : a) n2 += x * x;
  CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
  // distinct strings land far from colinear in dim 64
  std::vector<Vec> embs;
  for (int i = 0; i < 300; ++i)
    embs.push_back(pseudo_text_encode("characteristic " + std::to_string(i), 64, 7));
  double worst = 0.0;
  for (size_t i = 0; i < embs.size(); ++i)
    for (size_t j = i + 1; j < embs.size(); ++j) {
      double d = 0.0;
      for (int k = 0; k < 64; ++k) d += embs[i][size_t(k)] * embs[j][size_t(k)];
      worst = std::max(worst, std::abs(d));
    }
  CHECK(worst < 0.9);
}

TEST_CASE("bank save/load round-trips bit-exactly and checks the count") {
  TextBank bank = make_synthetic_bank(8, kStandardCharsPerLevel, 5);
  fs::path dir = fs::temp_directory_path() / "hierssl-bank-test";
  fs::remove_all(dir);
  save_bank(bank, dir);
  TextBank back = load_bank(dir);
  CHECK(back.dim == bank.dim);
  for (Level lv : kLevels) {
    size_t l = size_t(int(lv));
    CHECK(back.chars[l].a == bank.chars[l].a);
    CHECK(back.raw[l].a == bank.raw[l].a);
    CHECK(back.entries[l].size() == bank.entries[l].size());
    CHECK(back.entries[l][5].name == bank.entries[l][5].name);
    CHECK(back.entries[l][5].descriptions == bank.entries[l][5].descriptions);
  }
  fs::remove_all(dir);

  // nonstandard characteristic counts load only when explicitly allowed
  TextBank small = make_synthetic_bank(8, 6, 5);
  fs::path dir2 = fs::temp_directory_path() / "hierssl-bank-test2";
  fs::remove_all(dir2);
  save_bank(small, dir2);
  CHECK_THROWS(load_bank(dir2));
  TextBank ok = load_bank(dir2, true);
  CHECK(ok.chars_per_level == 6);
  fs::remove_all(dir2);
}

TEST_CASE("prompt templates: two stages per level, dataset named, 4 descriptions") {
  for (Level lv : kLevels) {
    std::vector<std::string> stages = llm_prompt_templates(lv, "renal biopsy");
    REQUIRE(stages.size() == 2);
    CHECK(stages[0].find("renal biopsy") != std::string::npos);
    CHECK(stages[1].find("renal biopsy") != std::string::npos);
    CHECK(stages[0].find("128") != std::string::npos);
    CHECK(stages[1].find("exactly 4") != std::string::npos);
    CHECK(stages[0].find(level_name(lv)) != std::string::npos);
  }
  // level-specific guidance differs across levels
  CHECK(llm_prompt_templates(Level::Patch, "x")[0] != llm_prompt_templates(Level::Patient, "x")[0]);
}
