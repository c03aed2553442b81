#pragma once
// Hierarchical corpus: patients own slides, slides own patches, every patch
// carries raw pixels and inherits its patient's class label. Includes the
// synthetic generator and the corpus.json + patches.f32 serialization.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hierssl/core.hpp"

namespace hierssl {

struct PatchRecord {
  std::string id;
  int slide = -1;             // index into Corpus::slides
  std::vector<float> pixels;  // H*W*C, row-major (y, x, channel)
};

struct SlideRecord {
  std::string id;
  int patient = -1;  // index into Corpus::patients
  std::vector<int> patches;
};

struct PatientRecord {
  std::string id;
  int label = 0;
  std::vector<int> slides;
};

struct Corpus {
  int num_classes = 0;
  int height = 0, width = 0, channels = 0;
  uint64_t seed = 0;
  std::vector<PatientRecord> patients;
  std::vector<SlideRecord> slides;
  std::vector<PatchRecord> patches;

  int64_t pixel_count() const { return int64_t(height) * width * channels; }
  int label_of_patch(int patch_idx) const {
    return patients[slides[patches[patch_idx].slide].patient].label;
  }
  // Nesting, id uniqueness, label ranges, finiteness. Throws on violation.
  void validate() const;
};

struct CorpusConfig {
  int patients = 24;
  int slides_per_patient = 2;
  int patches_per_slide = 8;
  int num_classes = 3;
  int height = 32, width = 32, channels = 3;
  // Signal scales. class/patient/slide offsets are smooth low-frequency fields;
  // patch offsets are smooth too but small; pixel noise is i.i.d. and dominates,
  // which keeps raw pixel distances (and untrained encoders) only weakly
  // class-informative while structure-aware training can still separate classes.
  double class_gap = 0.55;
  double patient_spread = 0.45;
  double slide_spread = 0.25;
  double patch_spread = 0.30;
  double pixel_noise = 4.80;
  int smooth_passes = 2;  // 3x3 box blur passes for the structured fields
};

Corpus generate_synthetic_corpus(const CorpusConfig& cfg, uint64_t seed);

// New corpus containing only the given patients (order preserved, ids kept).
Corpus subset_corpus(const Corpus& corpus, const std::vector<int>& patient_indices);

// Deterministic stratified-by-label patient split: (train, test).
std::pair<std::vector<int>, std::vector<int>> stratified_patient_split(const Corpus& corpus,
                                                                       double test_frac,
                                                                       uint64_t seed);

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace hierssl
