#pragma once
// Training objectives and their exact gradients.
//
// The contrastive core is a multi-positive InfoNCE: for anchor i with positive
// set P and per-pair similarities s_ij = f_i . f_j,
//   L(i) = -(1/|P|) * sum_{k in P} log( exp(s_ik/tau) / sum_{j != i} exp(s_ij/tau) )
// minimized (log-sum-exp computed with max subtraction). A level loss sums this
// over every anchor whose positive set is non-empty. The alignment loss is a
// temperature-softened KL from a constant text target onto the embedding,
// averaged over views; gradients flow into the embedding only.

#include <array>
#include <vector>

#include "hierssl/core.hpp"
#include "hierssl/model.hpp"
#include "hierssl/sampler.hpp"
#include "hierssl/textbank.hpp"

namespace hierssl {

struct SupconResult {
  double value = 0.0;
  Mat dfeatures;  // same shape as the input features
};

// Single-anchor loss over arbitrary (not necessarily unit) feature rows.
// Preconditions: positives non-empty, anchor excluded from positives, tau > 0.
SupconResult supcon_loss(const Mat& features, int anchor, const std::vector<int>& positives,
                         double tau);

struct LevelLossResult {
  double value = 0.0;
  Mat dfeatures;
  int active_anchors = 0;  // anchors with non-empty positive sets
  bool skipped = false;    // true when every positive set was empty
};

// Sum of supcon_loss over all anchors; anchors with empty positive sets are
// skipped, and `skipped` signals the degenerate all-empty case (value 0).
LevelLossResult level_contrastive_loss(const Mat& features,
                                       const std::vector<std::vector<int>>& positives, double tau);

struct KlResult {
  double value = 0.0;
  Vec dz;
};

// KL( softmax(target/tau_kl) || softmax(z/tau_kl) ) over coordinates; the
// target is a constant (no gradient). dz = (softmax(z/t) - softmax(target/t))/t.
KlResult kl_align_loss(const Vec& z, const Vec& target, double tau_kl);

struct HierContrastiveResult {
  double total = 0.0;
  std::array<double, kLevelCount> level{};       // unweighted level values
  std::array<bool, kLevelCount> level_used{};    // false when that level was skipped
};

// Level losses computed in the three projection spaces of `state` from the
// backbone embeddings `zs`. Accumulates projection-parameter gradients into
// `grads` and d(loss)/dz into `dzs` when non-null.
HierContrastiveResult hierarchy_contrastive_loss(
    const ModelState& state, const std::vector<Vec>& zs,
    const std::array<std::vector<std::vector<int>>, kLevelCount>& positives, double tau,
    const std::array<double, kLevelCount>& level_weights, ModelGrads* grads,
    std::vector<Vec>* dzs);

struct AlignmentResult {
  double value = 0.0;
};

// Mean over views of the summed per-level KL terms against fixed targets
// (targets[level][view] = selected characteristic embedding). Accumulates dz.
AlignmentResult alignment_loss(const std::vector<Vec>& zs,
                               const std::array<std::vector<Vec>, kLevelCount>& targets,
                               double tau_kl, std::vector<Vec>* dzs);

struct LossConfig {
  double tau = 0.7;
  double tau_kl = 1.0;
  bool enable_alignment = true;
  double contrastive_weight = 1.0;
  double alignment_weight = 1.0;
  std::array<double, kLevelCount> level_weights{1.0, 1.0, 1.0};
};

struct BatchLossResult {
  double total = 0.0;
  double contrastive = 0.0;  // weighted sum of the level losses
  std::array<double, kLevelCount> level{};
  std::array<bool, kLevelCount> level_used{};
  double alignment = 0.0;
  double mean_selected_cosine = 0.0;
  ModelGrads grads;
};

// Full training loss for one batch: encode every view, level-contrastive losses
// in the projection spaces, plus (optionally) the text alignment loss with
// targets chosen by cam_select on the current embeddings. Returns the value and
// gradients for all encoder and projection parameters; the bank receives none.
BatchLossResult batch_training_loss(const ModelState& state, const TextBank& bank,
                                    const HierBatch& batch, const LossConfig& cfg);

}  // namespace hierssl
