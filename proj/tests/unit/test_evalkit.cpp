#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "hierssl/corpus.hpp"
#include "hierssl/evalkit.hpp"
#include "hierssl/model.hpp"
#include "hierssl/textbank.hpp"
#include "json.hpp"

using namespace hierssl;
namespace fs = std::filesystem;

namespace {
Corpus eval_corpus(uint64_t seed, int patients = 6) {
  CorpusConfig cfg;
  cfg.patients = patients;
  cfg.slides_per_patient = 2;
  cfg.patches_per_slide = 2;
  cfg.num_classes = 3;
  cfg.height = 8;
  cfg.width = 8;
  cfg.channels = 1;
  return generate_synthetic_corpus(cfg, seed);
}

ModelState eval_model(const TextBank& bank) {
  EncoderConfig e;
  e.in_h = 8;
  e.in_w = 8;
  e.in_c = 1;
  e.conv1_channels = 2;
  e.conv2_channels = 3;
  e.embed_dim = 6;
  return init_model(e, bank, 4);
}
}  // namespace

TEST_CASE("knn vote fractions: k=3 with labels {A,A,B} gives (2/3, 1/3)") {
  Mat train(4, 3);
  train.at(0, 0) = 1.0;                       // e1, label 0
  train.at(1, 0) = 0.995;
  train.at(1, 1) = std::sqrt(1.0 - 0.995 * 0.995);  // close to e1, label 0
  train.at(2, 0) = 0.99;
  train.at(2, 1) = std::sqrt(1.0 - 0.99 * 0.99);    // close to e1, label 1
  train.at(3, 0) = -1.0;                      // far away, label 2
  std::vector<int> labels{0, 0, 1, 2};
  Vec query{1.0, 0.0, 0.0};
  Vec s3 = knn_scores(train, labels, 3, query, 3);
  CHECK(s3[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s3[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s3[2] == 0.0);
  // k=1 is one-hot on the nearest neighbor's class
  Vec s1 = knn_scores(train, labels, 3, query, 1);
  CHECK(s1[0] == 1.0);
  CHECK(s1[1] == 0.0);
}

TEST_CASE("knn tie on similarity resolves to the lower train index") {
  Mat train(3, 2);
  train.at(0, 0) = 1.0;  // duplicate row, label 1
  train.at(1, 0) = 1.0;  // duplicate row, label 0
  train.at(2, 1) = 1.0;  // orthogonal, label 0
  std::vector<int> labels{1, 0, 0};
  Vec query{1.0, 0.0};
  Vec s1 = knn_scores(train, labels, 2, query, 1);
  CHECK(s1[1] == 1.0);  // index 0 (label 1) wins the tie
  Vec s2 = knn_scores(train, labels, 2, query, 2);
  CHECK(s2[0] == doctest::Approx(0.5));
  CHECK(s2[1] == doctest::Approx(0.5));
}

TEST_CASE("argmax_class breaks ties toward the lowest class index") {
  CHECK(argmax_class(Vec{0.2, 0.5, 0.3}) == 1);
  CHECK(argmax_class(Vec{0.4, 0.4, 0.2}) == 0);
  CHECK(argmax_class(Vec{0.0, 0.3, 0.3}) == 1);
}

TEST_CASE("pool_scores is the arithmetic mean of the member rows") {
  Mat scores(3, 2);
  scores.at(0, 0) = 1.0;
  scores.at(1, 1) = 1.0;
  scores.at(2, 0) = 0.5;
  scores.at(2, 1) = 0.5;
  Vec pooled = pool_scores(scores, {0, 1, 2});
  CHECK(pooled[0] == doctest::Approx(0.5));
  CHECK(pooled[1] == doctest::Approx(0.5));
  Vec single = pool_scores(scores, {1});
  CHECK(single[1] == 1.0);
}

TEST_CASE("extract_representations: one unit row per patch, corpus order") {
  Corpus c = eval_corpus(1);
  TextBank bank = make_synthetic_bank(6, 9, 2);
  ModelState s = eval_model(bank);
  Mat reps = extract_representations(s, c);
  CHECK(reps.rows == int(c.patches.size()));
  CHECK(reps.cols == 6);
  for (int i = 0; i < reps.rows; ++i)
    CHECK(std::abs(norm2(reps.row(i), reps.cols) - 1.0) < 1e-9);
  // no augmentation: repeated extraction is identical
  Mat reps2 = extract_representations(s, c);
  CHECK(reps.a == reps2.a);
}

TEST_CASE("evaluate: report shapes, accuracy bookkeeping, pooled scores") {
  Corpus all = eval_corpus(1, 9);
  auto [train_idx, test_idx] = stratified_patient_split(all, 1.0 / 3.0, 4);
  Corpus train = subset_corpus(all, train_idx);
  Corpus test = subset_corpus(all, test_idx);
  TextBank bank = make_synthetic_bank(6, 9, 2);
  ModelState s = eval_model(bank);
  EvalOptions opt;
  opt.k = 3;
  KnnReport rep = evaluate(s, train, test, opt);
  CHECK(rep.k == 3);
  CHECK(rep.metric == "cosine");
  CHECK(rep.patch.ids.size() == test.patches.size());
  CHECK(rep.slide.ids.size() == test.slides.size());
  CHECK(rep.patient.ids.size() == test.patients.size());
  for (const LevelOutcome* out : {&rep.patch, &rep.slide, &rep.patient}) {
    int correct = 0;
    for (size_t i = 0; i < out->ids.size(); ++i) {
      CHECK(out->pred[i] == argmax_class(Vec(out->scores.row(int(i)),
                                             out->scores.row(int(i)) + out->scores.cols)));
      correct += out->pred[i] == out->label[i];
      double sum = 0.0;
      for (int c = 0; c < out->scores.cols; ++c) sum += out->scores.at(int(i), c);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));  // vote fractions
    }
    CHECK(out->correct == correct);
    CHECK(out->acc == doctest::Approx(double(correct) / double(out->ids.size())));
  }
  // slide scores are the mean of their member patch scores
  for (size_t sl = 0; sl < test.slides.size(); ++sl) {
    Vec manual(3, 0.0);
    for (int p : test.slides[sl].patches)
      for (int c = 0; c < 3; ++c) manual[size_t(c)] += rep.patch.scores.at(p, c);
    for (int c = 0; c < 3; ++c) {
      manual[size_t(c)] /= double(test.slides[sl].patches.size());
      CHECK(rep.slide.scores.at(int(sl), c) == doctest::Approx(manual[size_t(c)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("evaluate refuses overlapping patients and too-small banks") {
  Corpus c = eval_corpus(1);
  TextBank bank = make_synthetic_bank(6, 9, 2);
  ModelState s = eval_model(bank);
  EvalOptions opt;
  opt.k = 3;
  CHECK_THROWS(evaluate(s, c, c, opt));  // same patients on both sides
  auto [train_idx, test_idx] = stratified_patient_split(c, 1.0 / 3.0, 4);
  Corpus train = subset_corpus(c, train_idx);
  Corpus test = subset_corpus(c, test_idx);
  EvalOptions big;
  big.k = 10000;  // larger than the reference bank
  CHECK_THROWS(evaluate(s, train, test, big));
}

TEST_CASE("per-slide cap subsamples the reference bank deterministically") {
  Corpus all = eval_corpus(3, 9);
  auto [train_idx, test_idx] = stratified_patient_split(all, 1.0 / 3.0, 4);
  Corpus train = subset_corpus(all, train_idx);
  Corpus test = subset_corpus(all, test_idx);
  TextBank bank = make_synthetic_bank(6, 9, 2);
  ModelState s = eval_model(bank);
  EvalOptions opt;
  opt.k = 3;
  opt.per_slide_cap = 1;  // 12 train slides -> bank of 12 rows
  opt.cap_seed = 7;
  KnnReport a = evaluate(s, train, test, opt);
  KnnReport b = evaluate(s, train, test, opt);
  CHECK(a.patch.scores.a == b.patch.scores.a);
  CHECK(a.patch.acc == b.patch.acc);
}

TEST_CASE("report json has the expected envelope") {
  Corpus all = eval_corpus(1, 9);
  auto [train_idx, test_idx] = stratified_patient_split(all, 1.0 / 3.0, 4);
  Corpus train = subset_corpus(all, train_idx);
  Corpus test = subset_corpus(all, test_idx);
  TextBank bank = make_synthetic_bank(6, 9, 2);
  ModelState s = eval_model(bank);
  EvalOptions opt;
  opt.k = 3;
  KnnReport rep = evaluate(s, train, test, opt);
  fs::path dir = fs::temp_directory_path() / "hierssl-evalkit-test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_report_json(rep, dir / "report.json", false);
  std::ifstream in(dir / "report.json");
  nlohmann::json j;
  in >> j;
  CHECK(j["format"] == "knn-report-v1");
  CHECK(j["k"] == 3);
  CHECK(j["metric"] == "cosine");
  for (const char* lv : {"patch", "slide", "patient"}) {
    CHECK(j[lv].contains("acc"));
    CHECK(j[lv].contains("correct"));
    CHECK(j[lv].contains("total"));
  }
  fs::remove_all(dir);
}

TEST_CASE("marker bank: unit rows, naming, exact round-trip") {
  Corpus c = eval_corpus(1);
  TextBank bank = make_synthetic_bank(6, 9, 2);
  ModelState s = eval_model(bank);
  MarkerBank mb = build_marker_bank(s, c, 4, 0.05, 11);
  REQUIRE(mb.markers.size() == 3);
  CHECK(mb.dim == 6);
  for (size_t cls = 0; cls < 3; ++cls) {
    CHECK(mb.marker_names[cls].size() == 4);
    CHECK(mb.markers[cls].rows == 4);
    CHECK(mb.marker_names[cls][0] == "class-" + std::to_string(cls) + "-marker-00");
    for (int r = 0; r < 4; ++r)
      CHECK(std::abs(norm2(mb.markers[cls].row(r), 6) - 1.0) < 1e-5);
  }
  fs::path dir = fs::temp_directory_path() / "hierssl-marker-test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_marker_bank(mb, dir / "marker_bank.json");
  MarkerBank back = load_marker_bank(dir / "marker_bank.json");
  CHECK(back.dim == mb.dim);
  CHECK(back.class_names == mb.class_names);
  for (size_t cls = 0; cls < 3; ++cls) CHECK(back.markers[cls].a == mb.markers[cls].a);
  // deterministic in the seed; jitter varies across marker rows
  MarkerBank mb2 = build_marker_bank(s, c, 4, 0.05, 11);
  CHECK(mb2.markers[0].a == mb.markers[0].a);
  bool any_diff = false;
  for (int d = 0; d < 6; ++d) any_diff |= mb.markers[0].at(0, d) != mb.markers[0].at(1, d);
  CHECK(any_diff);
  fs::remove_all(dir);
}

TEST_CASE("marker similarity report structure") {
  Corpus c = eval_corpus(1);
  TextBank bank = make_synthetic_bank(6, 9, 2);
  ModelState s = eval_model(bank);
  MarkerBank mb = build_marker_bank(s, c, 3, 0.05, 11);
  int gt = c.label_of_patch(0);
  MarkerSimReport rep = marker_similarity_report(s, c.patches[0], gt, mb);
  CHECK(rep.patch_id == c.patches[0].id);
  CHECK(rep.gt_class == gt);
  REQUIRE(rep.sims.size() == 3);
  REQUIRE(rep.class_mean.size() == 3);
  for (size_t cls = 0; cls < 3; ++cls) {
    REQUIRE(rep.sims[cls].size() == 3);
    double mean = 0.0;
    for (const auto& [name, cosv] : rep.sims[cls]) {
      CHECK(cosv >= -1.0 - 1e-9);
      CHECK(cosv <= 1.0 + 1e-9);
      mean += cosv;
    }
    CHECK(rep.class_mean[cls] == doctest::Approx(mean / 3.0).epsilon(1e-12));
  }
}
