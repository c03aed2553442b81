#pragma once
// Hierarchical batch sampling: patient_count patients -> n_s slides each ->
// n_p patches each -> n_a augmented views each. Views are grouped into
// positive sets by shared ancestor (patch / slide / patient identity).

#include <cstdint>
#include <vector>

#include "hierssl/core.hpp"
#include "hierssl/corpus.hpp"
#include "hierssl/rng.hpp"

namespace hierssl {

struct AugmentConfig {
  double noise_sd = 0.30;  // additive gaussian, per pixel
  double flip_prob = 0.5;  // horizontal mirror
  int max_shift = 2;       // crop-with-pad translation radius, zero fill
};

// One augmented view of a patch; draw order (flip, shift, noise) is fixed so a
// replayed rng state reproduces the view exactly.
Vec augment_view(const PatchRecord& patch, int height, int width, int channels,
                 const AugmentConfig& cfg, Rng& rng);

struct ViewIndex {
  int patient = -1;  // corpus patient index
  int slide = -1;    // corpus slide index
  int patch = -1;    // corpus patch index
  int aug = -1;      // view slot within the patch, [0, n_a)
};

struct HierBatch {
  int patient_count = 0, n_s = 0, n_p = 0, n_a = 0;
  int height = 0, width = 0, channels = 0;
  std::vector<Vec> views;
  std::vector<ViewIndex> index;
  int view_count() const { return int(views.size()); }
};

// Patients are drawn without replacement (patient_count <= #patients required);
// slides and patches are drawn without replacement when the parent has enough
// children, with replacement otherwise.
HierBatch sample_hier_batch(const Corpus& corpus, int n_s, int n_p, int n_a, int patient_count,
                            const AugmentConfig& cfg, Rng& rng);

// positives[i] = indices of the other views sharing view i's ancestor at
// `level` (same patch / same slide / same patient); the anchor is excluded.
// Ascending order, deterministic.
std::vector<std::vector<int>> positive_sets(const HierBatch& batch, Level level);

}  // namespace hierssl
