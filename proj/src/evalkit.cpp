#include "hierssl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "hierssl/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace hierssl {

namespace {

void check_patch_shape(const ModelState& state, const Corpus& corpus) {
  const EncoderConfig& e = state.enc;
  if (corpus.height != e.in_h || corpus.width != e.in_w || corpus.channels != e.in_c)
    fail("evalkit", "corpus patch shape " + std::to_string(corpus.height) + "x" +
                        std::to_string(corpus.width) + "x" + std::to_string(corpus.channels) +
                        " does not match encoder input " + std::to_string(e.in_h) + "x" +
                        std::to_string(e.in_w) + "x" + std::to_string(e.in_c));
}

Vec patch_representation(const ModelState& state, const PatchRecord& patch) {
  Vec view(patch.pixels.begin(), patch.pixels.end());
  Vec z = encode(state, view);
  normalize(z, "evalkit", "representation of patch " + patch.id);
  return z;
}

}  // namespace

Mat extract_representations(const ModelState& state, const Corpus& corpus) {
  check_patch_shape(state, corpus);
  const int n = int(corpus.patches.size());
  if (n == 0) fail("evalkit", "corpus has no patches");
  Mat reps(n, state.embed_dim());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    Vec r = patch_representation(state, corpus.patches[size_t(i)]);
    std::copy(r.begin(), r.end(), reps.row(i));
  }
  return reps;
}

Vec knn_scores(const Mat& train_reps, const std::vector<int>& train_labels, int num_classes,
               const Vec& query, int k) {
  const int n = train_reps.rows;
  if (n == 0) fail("evalkit", "empty reference bank");
  if (int(train_labels.size()) != n) fail("evalkit", "label count does not match bank size");
  if (k < 1 || k > n)
    fail("evalkit", "k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  if (num_classes < 1) fail("evalkit", "num_classes must be >= 1");
  if (int(query.size()) != train_reps.cols) fail("evalkit", "query dim mismatch");
  for (int lbl : train_labels)
    if (lbl < 0 || lbl >= num_classes) fail("evalkit", "train label outside class range");

  Vec sims(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    sims[size_t(i)] = dot(train_reps.row(i), query.data(), int(query.size()));

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (sims[size_t(a)] != sims[size_t(b)]) return sims[size_t(a)] > sims[size_t(b)];
    return a < b;
  });

  Vec scores(size_t(num_classes), 0.0);
  for (int j = 0; j < k; ++j) scores[size_t(train_labels[size_t(order[size_t(j)])])] += 1.0;
  for (double& s : scores) s /= double(k);
  return scores;
}

Mat knn_predict(const Mat& train_reps, const std::vector<int>& train_labels, int num_classes,
                const Mat& queries, int k) {
  if (queries.cols != train_reps.cols) fail("evalkit", "query dim mismatch");
  Mat scores(queries.rows, num_classes);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < queries.rows; ++i) {
    Vec q(queries.row(i), queries.row(i) + queries.cols);
    Vec s = knn_scores(train_reps, train_labels, num_classes, q, k);
    std::copy(s.begin(), s.end(), scores.row(i));
  }
  return scores;
}

Vec pool_scores(const Mat& scores, const std::vector<int>& members) {
  if (members.empty()) fail("evalkit", "cannot pool an empty group");
  Vec pooled(size_t(scores.cols), 0.0);
  for (int m : members) {
    if (m < 0 || m >= scores.rows) fail("evalkit", "pool member index out of range");
    const double* row = scores.row(m);
    for (int c = 0; c < scores.cols; ++c) pooled[size_t(c)] += row[c];
  }
  for (double& x : pooled) x /= double(members.size());
  return pooled;
}

int argmax_class(const Vec& scores) {
  if (scores.empty()) fail("evalkit", "empty score vector");
  int best = 0;
  for (int c = 1; c < int(scores.size()); ++c)
    if (scores[size_t(c)] > scores[size_t(best)]) best = c;
  return best;
}

KnnReport evaluate(const ModelState& state, const Corpus& train, const Corpus& test,
                   const EvalOptions& opt) {
  if (train.num_classes != test.num_classes)
    fail("evalkit", "train and test splits disagree on num_classes");
  if (train.patches.empty() || test.patches.empty())
    fail("evalkit", "both splits must contain patches");
  check_patch_shape(state, train);
  check_patch_shape(state, test);
  {
    std::unordered_set<std::string> train_patients;
    for (const PatientRecord& p : train.patients) train_patients.insert(p.id);
    for (const PatientRecord& p : test.patients)
      if (train_patients.count(p.id))
        fail("evalkit", "splits share patient " + p.id + "; they must be disjoint");
  }

  // Reference bank: train patches, optionally capped per slide.
  std::vector<int> bank_patches;
  if (opt.per_slide_cap > 0) {
    for (int s = 0; s < int(train.slides.size()); ++s) {
      const std::vector<int>& kids = train.slides[size_t(s)].patches;
      if (int(kids.size()) <= opt.per_slide_cap) {
        bank_patches.insert(bank_patches.end(), kids.begin(), kids.end());
        continue;
      }
      Rng rng(derive_seed(opt.cap_seed, kStreamEvalCap, uint64_t(s)));
      std::vector<int> pool = kids;
      for (int j = 0; j < opt.per_slide_cap; ++j) {
        int pick = j + int(rng.uniform_int(pool.size() - size_t(j)));
        std::swap(pool[size_t(j)], pool[size_t(pick)]);
      }
      pool.resize(size_t(opt.per_slide_cap));
      std::sort(pool.begin(), pool.end());
      bank_patches.insert(bank_patches.end(), pool.begin(), pool.end());
    }
  } else {
    bank_patches.resize(train.patches.size());
    std::iota(bank_patches.begin(), bank_patches.end(), 0);
  }
  if (int(bank_patches.size()) < opt.k)
    fail("evalkit", "reference bank smaller than k; lower k or the per-slide cap");

  const int nb = int(bank_patches.size());
  Mat bank(nb, state.embed_dim());
  std::vector<int> bank_labels(static_cast<size_t>(nb));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < nb; ++i) {
    Vec r = patch_representation(state, train.patches[size_t(bank_patches[size_t(i)])]);
    std::copy(r.begin(), r.end(), bank.row(i));
    bank_labels[size_t(i)] = train.label_of_patch(bank_patches[size_t(i)]);
  }

  Mat test_reps = extract_representations(state, test);
  const int nc = test.num_classes;

  KnnReport report;
  report.k = opt.k;

  LevelOutcome& patch = report.patch;
  patch.scores = knn_predict(bank, bank_labels, nc, test_reps, opt.k);
  const int nt = int(test.patches.size());
  patch.ids.resize(size_t(nt));
  patch.label.resize(size_t(nt));
  patch.pred.resize(size_t(nt));
  for (int i = 0; i < nt; ++i) {
    patch.ids[size_t(i)] = test.patches[size_t(i)].id;
    patch.label[size_t(i)] = test.label_of_patch(i);
    Vec s(patch.scores.row(i), patch.scores.row(i) + nc);
    patch.pred[size_t(i)] = argmax_class(s);
    if (patch.pred[size_t(i)] == patch.label[size_t(i)]) ++patch.correct;
  }
  patch.acc = double(patch.correct) / double(nt);

  auto pooled_level = [&](LevelOutcome& out, bool by_patient) {
    const int groups = by_patient ? int(test.patients.size()) : int(test.slides.size());
    out.scores = Mat(groups, nc);
    out.ids.resize(size_t(groups));
    out.label.resize(size_t(groups));
    out.pred.resize(size_t(groups));
    for (int g = 0; g < groups; ++g) {
      std::vector<int> members;
      if (by_patient) {
        const PatientRecord& p = test.patients[size_t(g)];
        out.ids[size_t(g)] = p.id;
        out.label[size_t(g)] = p.label;
        for (int s : p.slides) {
          const std::vector<int>& kids = test.slides[size_t(s)].patches;
          members.insert(members.end(), kids.begin(), kids.end());
        }
      } else {
        const SlideRecord& s = test.slides[size_t(g)];
        out.ids[size_t(g)] = s.id;
        out.label[size_t(g)] = test.patients[size_t(s.patient)].label;
        members = s.patches;
      }
      Vec pooled = pool_scores(patch.scores, members);
      std::copy(pooled.begin(), pooled.end(), out.scores.row(g));
      out.pred[size_t(g)] = argmax_class(pooled);
      if (out.pred[size_t(g)] == out.label[size_t(g)]) ++out.correct;
    }
    out.acc = double(out.correct) / double(groups);
  };
  pooled_level(report.slide, /*by_patient=*/false);
  pooled_level(report.patient, /*by_patient=*/true);
  return report;
}

namespace {

ordered_json level_json(const LevelOutcome& lv, int num_classes, bool include_scores) {
  ordered_json j;
  j["acc"] = lv.acc;
  j["correct"] = lv.correct;
  j["total"] = int(lv.ids.size());
  if (include_scores) {
    ordered_json samples = ordered_json::array();
    for (int i = 0; i < int(lv.ids.size()); ++i) {
      ordered_json s;
      s["id"] = lv.ids[size_t(i)];
      s["label"] = lv.label[size_t(i)];
      s["pred"] = lv.pred[size_t(i)];
      s["scores"] = std::vector<double>(lv.scores.row(i), lv.scores.row(i) + num_classes);
      samples.push_back(std::move(s));
    }
    j["samples"] = std::move(samples);
  }
  return j;
}

}  // namespace

void save_report_json(const KnnReport& report, const fs::path& path, bool include_scores) {
  const int nc = report.patch.scores.cols;
  ordered_json j;
  j["format"] = "knn-report-v1";
  j["k"] = report.k;
  j["metric"] = report.metric;
  j["patch"] = level_json(report.patch, nc, include_scores);
  j["slide"] = level_json(report.slide, nc, include_scores);
  j["patient"] = level_json(report.patient, nc, include_scores);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("evalkit", "cannot write report " + path.string());
  out << j.dump(2) << "\n";
}

MarkerBank build_marker_bank(const ModelState& state, const Corpus& corpus, int markers_per_class,
                             double jitter, uint64_t seed) {
  if (markers_per_class < 1) fail("evalkit", "markers_per_class must be >= 1");
  if (jitter < 0.0) fail("evalkit", "jitter must be >= 0");
  Mat reps = extract_representations(state, corpus);
  const int d = reps.cols;

  MarkerBank bank;
  bank.dim = d;
  bank.class_names.resize(size_t(corpus.num_classes));
  bank.marker_names.resize(size_t(corpus.num_classes));
  bank.markers.assign(size_t(corpus.num_classes), Mat());

  for (int c = 0; c < corpus.num_classes; ++c) {
    Vec centroid(size_t(d), 0.0);
    int count = 0;
    for (int i = 0; i < reps.rows; ++i) {
      if (corpus.label_of_patch(i) != c) continue;
      const double* row = reps.row(i);
      for (int x = 0; x < d; ++x) centroid[size_t(x)] += row[x];
      ++count;
    }
    if (count == 0) fail("evalkit", "class " + std::to_string(c) + " has no patches");
    for (double& x : centroid) x /= double(count);
    normalize(centroid, "evalkit", "class " + std::to_string(c) + " centroid");

    bank.class_names[size_t(c)] = "class-" + std::to_string(c);
    Mat m(markers_per_class, d);
    for (int j = 0; j < markers_per_class; ++j) {
      char name[48];
      std::snprintf(name, sizeof(name), "class-%d-marker-%02d", c, j);
      bank.marker_names[size_t(c)].push_back(name);
      Vec v = centroid;
      if (j > 0) {
        Rng rng(derive_seed(seed, kStreamMarkers, uint64_t(c), uint64_t(j)));
        for (double& x : v) x += jitter * rng.normal();
        normalize(v, "evalkit", std::string("marker ") + name);
      }
      for (int x = 0; x < d; ++x) m.at(j, x) = q32(v[size_t(x)]);
    }
    bank.markers[size_t(c)] = std::move(m);
  }
  return bank;
}

void save_marker_bank(const MarkerBank& bank, const fs::path& path) {
  ordered_json j;
  j["format"] = "markers-v1";
  j["dim"] = bank.dim;
  ordered_json classes = ordered_json::array();
  for (int c = 0; c < int(bank.class_names.size()); ++c) {
    ordered_json cj;
    cj["name"] = bank.class_names[size_t(c)];
    ordered_json markers = ordered_json::array();
    const Mat& m = bank.markers[size_t(c)];
    for (int r = 0; r < m.rows; ++r) {
      ordered_json mj;
      mj["name"] = bank.marker_names[size_t(c)][size_t(r)];
      mj["embedding"] = std::vector<double>(m.row(r), m.row(r) + m.cols);
      markers.push_back(std::move(mj));
    }
    cj["markers"] = std::move(markers);
    classes.push_back(std::move(cj));
  }
  j["classes"] = std::move(classes);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("evalkit", "cannot write marker bank " + path.string());
  out << j.dump(2) << "\n";
}

MarkerBank load_marker_bank(const fs::path& path_in) {
  fs::path path = path_in;
  if (fs::is_directory(path)) path /= "marker_bank.json";
  std::ifstream in(path);
  if (!in) fail("evalkit", "cannot open marker bank " + path.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("evalkit", "marker bank " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "markers-v1")
    fail("evalkit", "marker bank " + path.string() + " has an unknown format");
  MarkerBank bank;
  bank.dim = j.at("dim").get<int>();
  if (bank.dim < 1) fail("evalkit", "marker bank dim must be >= 1");
  for (const auto& cj : j.at("classes")) {
    bank.class_names.push_back(cj.at("name").get<std::string>());
    const auto& markers = cj.at("markers");
    if (markers.empty()) fail("evalkit", "marker bank class has no markers");
    Mat m(int(markers.size()), bank.dim);
    std::vector<std::string> names;
    for (int r = 0; r < int(markers.size()); ++r) {
      names.push_back(markers.at(size_t(r)).at("name").get<std::string>());
      std::vector<double> e = markers.at(size_t(r)).at("embedding").get<std::vector<double>>();
      if (int(e.size()) != bank.dim) fail("evalkit", "marker embedding dim mismatch");
      double n2 = 0.0;
      for (int x = 0; x < bank.dim; ++x) {
        if (!std::isfinite(e[size_t(x)])) fail("evalkit", "non-finite marker embedding");
        m.at(r, x) = e[size_t(x)];
        n2 += e[size_t(x)] * e[size_t(x)];
      }
      if (std::fabs(std::sqrt(n2) - 1.0) > 1e-5)
        fail("evalkit", "marker embedding is not unit norm: " + names.back());
    }
    bank.marker_names.push_back(std::move(names));
    bank.markers.push_back(std::move(m));
  }
  if (bank.class_names.empty()) fail("evalkit", "marker bank has no classes");
  return bank;
}

MarkerSimReport marker_similarity_report(const ModelState& state, const PatchRecord& patch,
                                         int gt_class, const MarkerBank& bank) {
  if (bank.dim != state.embed_dim())
    fail("evalkit", "marker bank dim does not match model embedding dim");
  if (gt_class < 0 || gt_class >= int(bank.class_names.size()))
    fail("evalkit", "ground-truth class outside marker bank range");
  Vec rep = patch_representation(state, patch);

  MarkerSimReport rep_out;
  rep_out.patch_id = patch.id;
  rep_out.gt_class = gt_class;
  for (int c = 0; c < int(bank.class_names.size()); ++c) {
    const Mat& m = bank.markers[size_t(c)];
    std::vector<std::pair<std::string, double>> sims;
    double mean = 0.0;
    for (int r = 0; r < m.rows; ++r) {
      double cosine = dot(m.row(r), rep.data(), bank.dim);
      sims.emplace_back(bank.marker_names[size_t(c)][size_t(r)], cosine);
      mean += cosine;
    }
    mean /= double(m.rows);
    rep_out.sims.push_back(std::move(sims));
    rep_out.class_mean.push_back(mean);
  }
  return rep_out;
}

void save_marker_report(const MarkerSimReport& report, const fs::path& path) {
  ordered_json j;
  j["format"] = "marker-report-v1";
  j["patch_id"] = report.patch_id;
  j["gt_class"] = report.gt_class;
  ordered_json classes = ordered_json::array();
  for (int c = 0; c < int(report.sims.size()); ++c) {
    ordered_json cj;
    cj["class"] = c;
    cj["mean_cosine"] = report.class_mean[size_t(c)];
    ordered_json markers = ordered_json::array();
    for (const auto& [name, cosine] : report.sims[size_t(c)]) {
      ordered_json mj;
      mj["name"] = name;
      mj["cosine"] = cosine;
      markers.push_back(std::move(mj));
    }
    cj["markers"] = std::move(markers);
    classes.push_back(std::move(cj));
  }
  j["classes"] = std::move(classes);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("evalkit", "cannot write marker report " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace hierssl
