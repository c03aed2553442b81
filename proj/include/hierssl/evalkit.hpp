#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hierssl/corpus.hpp"
#include "hierssl/model.hpp"

namespace hierssl {

// One L2-normalized backbone embedding per patch, in corpus order. No
// augmentation, no projection heads.
Mat extract_representations(const ModelState& state, const Corpus& corpus);

// kNN vote fractions for one query under cosine similarity: scores[c] =
// (neighbors labeled c)/k. Neighbors are the k most similar train rows;
// equal similarities resolve to the lower train index. Requires unit-norm
// rows (queries may be any positive rescaling of one).
Vec knn_scores(const Mat& train_reps, const std::vector<int>& train_labels, int num_classes,
               const Vec& query, int k);

// knn_scores for every query row; result is queries.rows x num_classes.
Mat knn_predict(const Mat& train_reps, const std::vector<int>& train_labels, int num_classes,
                const Mat& queries, int k);

// Arithmetic mean of the member rows of `scores`.
Vec pool_scores(const Mat& scores, const std::vector<int>& members);

// Highest-scoring class, ties to the lowest index.
int argmax_class(const Vec& scores);

struct LevelOutcome {
  std::vector<std::string> ids;
  std::vector<int> label, pred;
  Mat scores;  // rows align with ids
  int correct = 0;
  double acc = 0.0;
};

struct KnnReport {
  int k = 0;
  std::string metric = "cosine";
  LevelOutcome patch, slide, patient;
};

struct EvalOptions {
  int k = 10;
  // If > 0, at most this many patches per train slide enter the reference
  // bank (sampled without replacement from a stream derived from cap_seed).
  int per_slide_cap = 0;
  uint64_t cap_seed = 0;
};

// Frozen-backbone kNN evaluation: train split forms the reference bank, every
// test patch is scored, and slide/patient predictions pool the member patch
// score vectors (patients pool over all their patches directly).
KnnReport evaluate(const ModelState& state, const Corpus& train, const Corpus& test,
                   const EvalOptions& opt);

void save_report_json(const KnnReport& report, const std::filesystem::path& path,
                      bool include_scores);

// ---- marker interpretability ------------------------------------------------

struct MarkerBank {
  int dim = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::string>> marker_names;  // per class
  std::vector<Mat> markers;                            // per class: rows are unit embeddings
};

// Markers synthesized from the trained model: per class, the normalized mean
// representation over that class's patches, plus `markers_per_class - 1`
// jittered unit variants around it.
MarkerBank build_marker_bank(const ModelState& state, const Corpus& corpus, int markers_per_class,
                             double jitter, uint64_t seed);

void save_marker_bank(const MarkerBank& bank, const std::filesystem::path& path);
MarkerBank load_marker_bank(const std::filesystem::path& path);

struct MarkerSimReport {
  std::string patch_id;
  int gt_class = -1;
  // sims[c] = per-marker (name, cosine) for class c; class_mean[c] = mean cosine.
  std::vector<std::vector<std::pair<std::string, double>>> sims;
  std::vector<double> class_mean;
};

MarkerSimReport marker_similarity_report(const ModelState& state, const PatchRecord& patch,
                                         int gt_class, const MarkerBank& bank);

void save_marker_report(const MarkerSimReport& report, const std::filesystem::path& path);

}  // namespace hierssl
