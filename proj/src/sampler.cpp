#include "hierssl/sampler.hpp"

#include <algorithm>
#include <unordered_map>

namespace hierssl {

Vec augment_view(const PatchRecord& patch, int height, int width, int channels,
                 const AugmentConfig& cfg, Rng& rng) {
  if (int64_t(patch.pixels.size()) != int64_t(height) * width * channels)
    fail("sampler", "augment_view: patch " + patch.id + " does not match the given shape");
  const bool flip = rng.uniform() < cfg.flip_prob;
  int sy = 0, sx = 0;
  if (cfg.max_shift > 0) {
    sy = int(rng.uniform_int(uint64_t(2 * cfg.max_shift + 1))) - cfg.max_shift;
    sx = int(rng.uniform_int(uint64_t(2 * cfg.max_shift + 1))) - cfg.max_shift;
  }
  Vec out(patch.pixels.size(), 0.0);
  for (int y = 0; y < height; ++y) {
    int src_y = y + sy;
    if (src_y < 0 || src_y >= height) continue;  // zero padding
    for (int x = 0; x < width; ++x) {
      int src_x = x + sx;
      if (src_x < 0 || src_x >= width) continue;
      int sx2 = flip ? (width - 1 - src_x) : src_x;
      const float* src = patch.pixels.data() + (size_t(src_y) * width + sx2) * channels;
      double* dst = out.data() + (size_t(y) * width + x) * channels;
      for (int c = 0; c < channels; ++c) dst[c] = double(src[c]);
    }
  }
  if (cfg.noise_sd > 0.0)
    for (double& v : out) v += cfg.noise_sd * rng.normal();
  return out;
}

namespace {

// k draws from [0,n): a shuffled prefix when n >= k, uniform with replacement otherwise.
std::vector<int> draw_children(int n, int k, Rng& rng) {
  std::vector<int> out;
  out.reserve(size_t(k));
  if (n >= k) {
    std::vector<int> idx(size_t(n), 0);
    for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + int(rng.uniform_int(uint64_t(n - i)));
      std::swap(idx[size_t(i)], idx[size_t(j)]);
      out.push_back(idx[size_t(i)]);
    }
  } else {
    for (int i = 0; i < k; ++i) out.push_back(int(rng.uniform_int(uint64_t(n))));
  }
  return out;
}

}  // namespace

HierBatch sample_hier_batch(const Corpus& corpus, int n_s, int n_p, int n_a, int patient_count,
                            const AugmentConfig& cfg, Rng& rng) {
  if (n_s < 1 || n_p < 1 || n_a < 1 || patient_count < 1)
    fail("sampler", "batch shape counts must all be >= 1");
  if (patient_count > int(corpus.patients.size()))
    fail("sampler", "patient_count " + std::to_string(patient_count) + " exceeds corpus patients " +
                        std::to_string(corpus.patients.size()));

  HierBatch batch;
  batch.patient_count = patient_count;
  batch.n_s = n_s;
  batch.n_p = n_p;
  batch.n_a = n_a;
  batch.height = corpus.height;
  batch.width = corpus.width;
  batch.channels = corpus.channels;
  batch.views.reserve(size_t(patient_count) * n_s * n_p * n_a);
  batch.index.reserve(batch.views.capacity());

  std::vector<int> chosen = draw_children(int(corpus.patients.size()), patient_count, rng);
  for (int pi : chosen) {
    const PatientRecord& patient = corpus.patients[pi];
    std::vector<int> slide_slots = draw_children(int(patient.slides.size()), n_s, rng);
    for (int ss : slide_slots) {
      int slide_idx = patient.slides[size_t(ss)];
      const SlideRecord& slide = corpus.slides[slide_idx];
      std::vector<int> patch_slots = draw_children(int(slide.patches.size()), n_p, rng);
      for (int ks : patch_slots) {
        int patch_idx = slide.patches[size_t(ks)];
        for (int a = 0; a < n_a; ++a) {
          batch.views.push_back(augment_view(corpus.patches[size_t(patch_idx)], corpus.height,
                                             corpus.width, corpus.channels, cfg, rng));
          batch.index.push_back(ViewIndex{pi, slide_idx, patch_idx, a});
        }
      }
    }
  }
  return batch;
}

std::vector<std::vector<int>> positive_sets(const HierBatch& batch, Level level) {
  const int n = batch.view_count();
  if (int(batch.index.size()) != n) fail("sampler", "positive_sets: malformed batch");
  auto key = [&](int i) -> int {
    const ViewIndex& v = batch.index[size_t(i)];
    switch (level) {
      case Level::Patient: return v.patient;
      case Level::Slide: return v.slide;
      default: return v.patch;
    }
  };
  std::unordered_map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups[key(i)].push_back(i);
  std::vector<std::vector<int>> positives(static_cast<size_t>(n));
  for (auto& [id, members] : groups) {
    (void)id;
    for (int i : members) {
      std::vector<int>& set = positives[size_t(i)];
      set.reserve(members.size() - 1);
      for (int j : members)
        if (j != i) set.push_back(j);  // members are already ascending
    }
  }
  return positives;
}

}  // namespace hierssl
