#include "hierssl/textbank.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>

#include "hierssl/binio.hpp"
#include "hierssl/rng.hpp"

namespace hierssl {

using json = nlohmann::json;

namespace {

// Level-specific focus vocabulary for the elicitation prompts.
const char* level_focus(Level lv) {
  switch (lv) {
    case Level::Patch:
      return "cellular features such as cellularity, DNA localization, and cell density";
    case Level::Slide:
      return "tissue features such as tissue architecture and cell infiltration";
    default:
      return "diagnosis features such as tumor heterogeneity and lipid distribution";
  }
}

const char* level_scope(Level lv) {
  switch (lv) {
    case Level::Patch: return "a single small field-of-view patch";
    case Level::Slide: return "a whole slide";
    default: return "all imaging available for one patient";
  }
}

}  // namespace

std::vector<std::string> llm_prompt_templates(Level level, const std::string& dataset) {
  const std::string lv = level_name(level);
  std::string stage1 =
      "Stage 1 (" + lv + " level). You are assisting with a study of " + dataset +
      " images. List the most informative visual characteristics that can be assessed from " +
      level_scope(level) + ". Focus on " + level_focus(level) +
      ". Return a numbered list of at least " + std::to_string(kStandardCharsPerLevel) +
      " short, distinct characteristic names; duplicates or non-visual items will be discarded.";
  std::string stage2 =
      "Stage 2 (" + lv + " level). For every characteristic you listed in stage 1, write exactly " +
      std::to_string(kDescriptionsPerCharacteristic) + " natural-language descriptions of how it appears in " +
      dataset + " images at the " + lv +
      " level. Each description must be one sentence, and the " +
      std::to_string(kDescriptionsPerCharacteristic) +
      " descriptions of a characteristic must use clearly different phrasing. Group the output by "
      "characteristic, in the stage 1 order.";
  return {stage1, stage2};
}

Vec pseudo_text_encode(const std::string& text, int dim, uint64_t seed) {
  if (dim < 2) fail("bank", "pseudo_text_encode: dim must be >= 2");
  Rng rng(derive_seed(fnv1a64(text), kStreamText, seed, uint64_t(dim)));
  Vec v(static_cast<size_t>(dim));
  for (double& x : v) x = rng.normal();
  normalize(v, "bank", "pseudo text embedding of \"" + text + "\"");
  q32_all(v);
  return v;
}

void TextBank::recompute_char_embeddings() {
  for (int l = 0; l < kLevelCount; ++l) {
    const Mat& r = raw[size_t(l)];
    if (r.rows != chars_per_level * kDescriptionsPerCharacteristic || r.cols != dim)
      fail("bank", std::string("raw embedding matrix has wrong shape at level ") +
                       level_name(kLevels[l]));
    Mat c(chars_per_level, dim);
    for (int k = 0; k < chars_per_level; ++k) {
      double* out = c.row(k);
      for (int d = 0; d < dim; ++d) {
        double s = 0.0;
        for (int j = 0; j < kDescriptionsPerCharacteristic; ++j)
          s += r.at(k * kDescriptionsPerCharacteristic + j, d);
        out[d] = s / kDescriptionsPerCharacteristic;
      }
      double n = norm2(out, dim);
      if (!(n >= 1e-8))
        fail("bank", std::string("degenerate characteristic at level ") +
                         level_name(kLevels[l]) + ", index " + std::to_string(k) +
                         ": description embeddings average to zero");
      for (int d = 0; d < dim; ++d) out[d] = q32(out[d] / n);
    }
    chars[size_t(l)] = std::move(c);
  }
}

void TextBank::validate() const {
  if (dim < 1) fail("bank", "dim must be >= 1");
  if (chars_per_level < 1) fail("bank", "chars_per_level must be >= 1");
  for (int l = 0; l < kLevelCount; ++l) {
    const char* lv = level_name(kLevels[l]);
    if (int(entries[size_t(l)].size()) != chars_per_level)
      fail("bank", std::string("level ") + lv + " has " +
                       std::to_string(entries[size_t(l)].size()) + " characteristics, expected " +
                       std::to_string(chars_per_level));
    if (!all_finite(raw[size_t(l)].a.data(), raw[size_t(l)].size()))
      fail("bank", std::string("non-finite raw embedding at level ") + lv);
    const Mat& c = chars[size_t(l)];
    if (c.rows != chars_per_level || c.cols != dim)
      fail("bank", std::string("char embedding matrix has wrong shape at level ") + lv);
    for (int k = 0; k < chars_per_level; ++k) {
      double n = norm2(c.row(k), dim);
      if (std::abs(n - 1.0) > 1e-6)
        fail("bank", std::string("char embedding not unit norm at level ") + lv + ", index " +
                         std::to_string(k));
    }
  }
}

Vec characteristic_embedding(const TextBank& bank, Level level, int char_id) {
  if (char_id < 0 || char_id >= bank.chars_per_level)
    fail("bank", "characteristic id out of range: " + std::to_string(char_id));
  const Mat& r = bank.raw[size_t(int(level))];
  Vec mean(size_t(bank.dim), 0.0);
  for (int j = 0; j < kDescriptionsPerCharacteristic; ++j) {
    const double* row = r.row(char_id * kDescriptionsPerCharacteristic + j);
    for (int d = 0; d < bank.dim; ++d) mean[size_t(d)] += row[d];
  }
  for (double& x : mean) x /= kDescriptionsPerCharacteristic;
  double n = norm2(mean);
  if (!(n >= 1e-8))
    fail("bank", std::string("degenerate characteristic at level ") + level_name(level) +
                     ", index " + std::to_string(char_id) +
                     ": description embeddings average to zero");
  for (double& x : mean) x = q32(x / n);
  return mean;
}

TextBank make_synthetic_bank(int dim, int chars_per_level, uint64_t seed,
                             const std::string& dataset) {
  if (dim < 2) fail("bank", "make_synthetic_bank: dim must be >= 2");
  if (chars_per_level < 1) fail("bank", "make_synthetic_bank: chars_per_level must be >= 1");
  TextBank bank;
  bank.dim = dim;
  bank.chars_per_level = chars_per_level;
  static const char* kPhrasing[kDescriptionsPerCharacteristic] = {
      "presents as", "is visible as", "shows up as", "can be recognized by"};
  for (int l = 0; l < kLevelCount; ++l) {
    const char* lv = level_name(kLevels[l]);
    Mat raw(chars_per_level * kDescriptionsPerCharacteristic, dim);
    for (int k = 0; k < chars_per_level; ++k) {
      CharacteristicEntry e;
      e.id = k;
      char name[64];
      std::snprintf(name, sizeof(name), "%s-feature-%03d", lv, k);
      e.name = name;
      for (int j = 0; j < kDescriptionsPerCharacteristic; ++j) {
        e.descriptions[size_t(j)] = std::string("In ") + dataset + " images, " + e.name + " " +
                                    kPhrasing[j] + " a distinctive " + lv +
                                    "-level visual pattern (variant " + std::to_string(j) + ").";
        Vec emb = pseudo_text_encode(e.descriptions[size_t(j)], dim, seed);
        double* row = raw.row(k * kDescriptionsPerCharacteristic + j);
        for (int d = 0; d < dim; ++d) row[d] = emb[size_t(d)];
      }
      bank.entries[size_t(l)].push_back(std::move(e));
    }
    bank.raw[size_t(l)] = std::move(raw);
  }
  bank.recompute_char_embeddings();
  bank.validate();
  return bank;
}

void save_bank(const TextBank& bank, const std::filesystem::path& dir) {
  bank.validate();
  std::filesystem::create_directories(dir);
  json j;
  j["format"] = "bank-v1";
  j["byte_order"] = "little";
  j["data_file"] = "bank.f32";
  j["dim"] = bank.dim;
  j["chars_per_level"] = bank.chars_per_level;
  j["descriptions_per_char"] = kDescriptionsPerCharacteristic;
  json jlevels;
  for (int l = 0; l < kLevelCount; ++l) {
    json arr = json::array();
    for (const CharacteristicEntry& e : bank.entries[size_t(l)]) {
      json je;
      je["id"] = e.id;
      je["name"] = e.name;
      je["descriptions"] = e.descriptions;
      arr.push_back(je);
    }
    jlevels[level_name(kLevels[l])] = arr;
  }
  j["levels"] = jlevels;
  write_file_bytes(dir / "bank.json", j.dump(2) + "\n", "bank");

  // Blob layout: level (patient, slide, patch) x characteristic x description x dim.
  std::vector<const Vec*> parts;
  for (int l = 0; l < kLevelCount; ++l) parts.push_back(&bank.raw[size_t(l)].a);
  write_f32_blob(dir / "bank.f32", parts, "bank");
}

TextBank load_bank(const std::filesystem::path& dir, bool allow_any_count) {
  const std::filesystem::path manifest = dir / "bank.json";
  json j;
  try {
    j = json::parse(read_file_bytes(manifest, "bank"));
  } catch (const json::exception& e) {
    fail("bank", "cannot parse " + manifest.string() + ": " + e.what());
  }
  TextBank bank;
  try {
    if (j.at("format") != "bank-v1") fail("bank", "unsupported format in " + manifest.string());
    bank.dim = j.at("dim").get<int>();
    bank.chars_per_level = j.at("chars_per_level").get<int>();
    if (j.at("descriptions_per_char").get<int>() != kDescriptionsPerCharacteristic)
      fail("bank", "descriptions_per_char must be " +
                       std::to_string(kDescriptionsPerCharacteristic) + " in " + manifest.string());
    for (int l = 0; l < kLevelCount; ++l) {
      const char* lv = level_name(kLevels[l]);
      for (const json& je : j.at("levels").at(lv)) {
        CharacteristicEntry e;
        e.id = je.at("id").get<int>();
        e.name = je.at("name").get<std::string>();
        auto descs = je.at("descriptions");
        if (descs.size() != kDescriptionsPerCharacteristic)
          fail("bank", std::string("characteristic ") + e.name + " at level " + lv +
                           " must have exactly " +
                           std::to_string(kDescriptionsPerCharacteristic) + " descriptions");
        for (int d = 0; d < kDescriptionsPerCharacteristic; ++d)
          e.descriptions[size_t(d)] = descs.at(size_t(d)).get<std::string>();
        bank.entries[size_t(l)].push_back(std::move(e));
      }
    }
  } catch (const json::exception& e) {
    fail("bank", "malformed manifest " + manifest.string() + ": " + e.what());
  }
  if (bank.dim < 1) fail("bank", "dimension must be >= 1 in " + manifest.string());
  if (!allow_any_count && bank.chars_per_level != kStandardCharsPerLevel)
    fail("bank", "characteristic count is " + std::to_string(bank.chars_per_level) +
                     ", expected " + std::to_string(kStandardCharsPerLevel) + " (" +
                     manifest.string() + ")");
  for (int l = 0; l < kLevelCount; ++l)
    if (int(bank.entries[size_t(l)].size()) != bank.chars_per_level)
      fail("bank", std::string("level ") + level_name(kLevels[l]) + " lists " +
                       std::to_string(bank.entries[size_t(l)].size()) +
                       " characteristics, manifest says " + std::to_string(bank.chars_per_level));

  const std::string data_file = j.value("data_file", "bank.f32");
  const size_t per_level = size_t(bank.chars_per_level) * kDescriptionsPerCharacteristic *
                           size_t(bank.dim);
  Vec blob = read_f32_blob(dir / data_file, per_level * kLevelCount, "bank");
  for (int l = 0; l < kLevelCount; ++l) {
    Mat r(bank.chars_per_level * kDescriptionsPerCharacteristic, bank.dim);
    std::copy(blob.begin() + long(per_level) * l, blob.begin() + long(per_level) * (l + 1),
              r.a.begin());
    if (!all_finite(r.a.data(), r.size()))
      fail("bank", std::string("non-finite raw embedding at level ") + level_name(kLevels[l]) +
                       " in " + (dir / data_file).string());
    bank.raw[size_t(l)] = std::move(r);
  }
  bank.recompute_char_embeddings();
  bank.validate();
  return bank;
}

}  // namespace hierssl
