#include "hierssl/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace hierssl {

namespace {

// Shared core for supcon/level losses.
//
// Per anchor i (non-empty positives): with logits l_j = s_ij / tau (j != i),
//   L_i = logsumexp_j(l_j) - (1/|P_i|) sum_{k in P_i} l_k
// and dL_i/ds_ij = (q_ij - p_ij)/tau with q = softmax over the logits and
// p_ij = [j in P_i]/|P_i|. Those per-anchor rows form G; since s_ij = f_i.f_j
// contributes to both L_i and L_j, dL/dF = (G + G^T) F.
struct ContrastiveCore {
  double value = 0.0;
  int active = 0;
  Mat g;  // per-anchor d(loss)/d(s_ij), zero diagonal, zero rows for skipped anchors
};

ContrastiveCore contrastive_core(const Mat& f, const std::vector<std::vector<int>>& positives,
                                 double tau) {
  const int n = f.rows;
  if (!(tau > 0.0)) fail("objectives", "tau must be > 0");
  if (int(positives.size()) != n)
    fail("objectives", "positive set count does not match feature count");
  if (n < 2) fail("objectives", "need at least two features");
  for (int i = 0; i < n; ++i)
    for (int k : positives[size_t(i)]) {
      if (k == i) fail("objectives", "anchor contained in its own positive set");
      if (k < 0 || k >= n) fail("objectives", "positive index out of range");
    }

  // Gram matrix
  Mat s(n, n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s.at(i, j) = dot(f.row(i), f.row(j), f.cols);

  ContrastiveCore core;
  core.g = Mat(n, n);
  Vec per_anchor(size_t(n), 0.0);
  std::vector<char> active(size_t(n), 0);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const std::vector<int>& pos = positives[size_t(i)];
    if (pos.empty()) continue;
    double pos_mean = 0.0;
    for (int k : pos) pos_mean += s.at(i, k) / tau;
    pos_mean /= double(pos.size());

    // stable log-sum-exp over j != i
    double m = -HUGE_VAL;
    for (int j = 0; j < n; ++j)
      if (j != i) m = std::max(m, s.at(i, j) / tau);
    double sum = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) sum += std::exp(s.at(i, j) / tau - m);
    double lse = m + std::log(sum);

    per_anchor[size_t(i)] = lse - pos_mean;
    active[size_t(i)] = 1;

    double* grow = core.g.row(i);
    for (int j = 0; j < n; ++j)
      if (j != i) grow[j] = std::exp(s.at(i, j) / tau - lse) / tau;
    for (int k : pos) grow[k] -= 1.0 / (tau * double(pos.size()));
  }

  for (int i = 0; i < n; ++i) {  // fixed-order reduction
    core.value += per_anchor[size_t(i)];
    core.active += active[size_t(i)];
  }
  return core;
}

Mat core_feature_grads(const ContrastiveCore& core, const Mat& f) {
  const int n = f.rows, d = f.cols;
  Mat df(n, d);
#pragma omp parallel for schedule(static)
  for (int m = 0; m < n; ++m) {
    double* out = df.row(m);
    for (int j = 0; j < n; ++j) {
      if (j == m) continue;
      double w = core.g.at(m, j) + core.g.at(j, m);
      if (w == 0.0) continue;
      const double* fj = f.row(j);
      for (int c = 0; c < d; ++c) out[c] += w * fj[c];
    }
  }
  return df;
}

}  // namespace

SupconResult supcon_loss(const Mat& features, int anchor, const std::vector<int>& positives,
                         double tau) {
  const int n = features.rows;
  if (anchor < 0 || anchor >= n) fail("objectives", "anchor index out of range");
  if (positives.empty()) fail("objectives", "anchor has an empty positive set");
  std::vector<std::vector<int>> sets(static_cast<size_t>(n));
  sets[size_t(anchor)] = positives;
  ContrastiveCore core = contrastive_core(features, sets, tau);
  SupconResult r;
  r.value = core.value;
  r.dfeatures = core_feature_grads(core, features);
  return r;
}

LevelLossResult level_contrastive_loss(const Mat& features,
                                       const std::vector<std::vector<int>>& positives,
                                       double tau) {
  if (int(positives.size()) != features.rows)
    fail("objectives", "positive set count does not match feature count");
  ContrastiveCore core = contrastive_core(features, positives, tau);
  LevelLossResult r;
  r.value = core.value;
  r.active_anchors = core.active;
  r.skipped = (core.active == 0);
  r.dfeatures = core_feature_grads(core, features);
  return r;
}

KlResult kl_align_loss(const Vec& z, const Vec& target, double tau_kl) {
  if (z.size() != target.size()) fail("objectives", "kl_align_loss: size mismatch");
  if (!(tau_kl > 0.0)) fail("objectives", "tau_kl must be > 0");
  const int d = int(z.size());
  if (d < 1) fail("objectives", "kl_align_loss: empty input");

  auto log_softmax = [&](const Vec& v, Vec& out) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double sum = 0.0;
    for (int i = 0; i < d; ++i) sum += std::exp(v[size_t(i)] / tau_kl - m / tau_kl);
    double lse = m / tau_kl + std::log(sum);
    out.resize(size_t(d));
    for (int i = 0; i < d; ++i) out[size_t(i)] = v[size_t(i)] / tau_kl - lse;
  };
  Vec log_p, log_q;
  log_softmax(target, log_p);
  log_softmax(z, log_q);

  KlResult r;
  r.dz.assign(size_t(d), 0.0);
  for (int i = 0; i < d; ++i) {
    double p = std::exp(log_p[size_t(i)]);
    double q = std::exp(log_q[size_t(i)]);
    r.value += p * (log_p[size_t(i)] - log_q[size_t(i)]);
    r.dz[size_t(i)] = (q - p) / tau_kl;
  }
  if (r.value < 0.0) r.value = 0.0;  // clip float fuzz; KL is non-negative
  return r;
}

HierContrastiveResult hierarchy_contrastive_loss(
    const ModelState& state, const std::vector<Vec>& zs,
    const std::array<std::vector<std::vector<int>>, kLevelCount>& positives, double tau,
    const std::array<double, kLevelCount>& level_weights, ModelGrads* grads,
    std::vector<Vec>* dzs) {
  const int n = int(zs.size());
  const int fd = state.feature_dim();
  HierContrastiveResult out;
  for (int l = 0; l < kLevelCount; ++l) {
    const Level level = kLevels[size_t(l)];
    Mat f(n, fd);
    std::vector<ProjectionCache> caches(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      Vec fi = project(state, level, zs[size_t(i)], &caches[size_t(i)]);
      std::copy(fi.begin(), fi.end(), f.row(i));
    }
    LevelLossResult res = level_contrastive_loss(f, positives[size_t(l)], tau);
    out.level[size_t(l)] = res.value;
    out.level_used[size_t(l)] = !res.skipped;
    if (res.skipped) continue;
    const double w = level_weights[size_t(l)];
    out.total += w * res.value;
    if (!grads && !dzs) continue;
    Vec df(static_cast<size_t>(fd));
    for (int i = 0; i < n; ++i) {
      const double* row = res.dfeatures.row(i);
      for (int k = 0; k < fd; ++k) df[size_t(k)] = w * row[k];
      project_backward(state, level, zs[size_t(i)], caches[size_t(i)], df, grads,
                       dzs ? &(*dzs)[size_t(i)] : nullptr);
    }
  }
  return out;
}

AlignmentResult alignment_loss(const std::vector<Vec>& zs,
                               const std::array<std::vector<Vec>, kLevelCount>& targets,
                               double tau_kl, std::vector<Vec>* dzs) {
  const int n = int(zs.size());
  if (n == 0) fail("objectives", "alignment_loss: empty batch");
  for (int l = 0; l < kLevelCount; ++l)
    if (int(targets[size_t(l)].size()) != n)
      fail("objectives", "alignment_loss: target count does not match view count");
  AlignmentResult out;
  const double inv_n = 1.0 / double(n);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < kLevelCount; ++l) {
      KlResult kl = kl_align_loss(zs[size_t(i)], targets[size_t(l)][size_t(i)], tau_kl);
      out.value += inv_n * kl.value;
      if (dzs)
        for (size_t d = 0; d < kl.dz.size(); ++d) (*dzs)[size_t(i)][d] += inv_n * kl.dz[d];
    }
  }
  return out;
}

BatchLossResult batch_training_loss(const ModelState& state, const TextBank& bank,
                                    const HierBatch& batch, const LossConfig& cfg) {
  const int n = batch.view_count();
  if (n < 2) fail("objectives", "batch must contain at least two views");
  if (bank.dim != state.embed_dim())
    fail("objectives", "bank dim does not match model embedding dim");
  if (bank.chars_per_level != state.feature_dim())
    fail("objectives", "bank characteristic count does not match projection width");

  std::vector<EncodeCache> ecaches;
  std::vector<Vec> zs = encode_views(state, batch.views, ecaches);

  std::array<std::vector<std::vector<int>>, kLevelCount> possets;
  for (int l = 0; l < kLevelCount; ++l)
    possets[size_t(l)] = positive_sets(batch, kLevels[size_t(l)]);

  BatchLossResult out;
  out.grads = make_grads(state);
  std::vector<Vec> dzs(size_t(n), Vec(size_t(state.embed_dim()), 0.0));

  std::array<double, kLevelCount> weights;
  for (int l = 0; l < kLevelCount; ++l)
    weights[size_t(l)] = cfg.contrastive_weight * cfg.level_weights[size_t(l)];
  HierContrastiveResult hc =
      hierarchy_contrastive_loss(state, zs, possets, cfg.tau, weights, &out.grads, &dzs);
  out.level = hc.level;
  out.level_used = hc.level_used;
  out.contrastive = hc.total;

  if (cfg.enable_alignment) {
    // Select targets from the current embeddings; the selection itself is
    // piecewise constant and carries no gradient, and the bank rows are
    // constants, so only dz below feeds the backward pass.
    std::array<std::vector<Vec>, kLevelCount> targets;
    double cos_sum = 0.0;
    std::array<std::vector<int>, kLevelCount> selected;
    for (int l = 0; l < kLevelCount; ++l) {
      targets[size_t(l)].resize(size_t(n));
      selected[size_t(l)].resize(size_t(n));
      for (int i = 0; i < n; ++i) {
        CamSelection sel = cam_select(bank, kLevels[size_t(l)], zs[size_t(i)]);
        selected[size_t(l)][size_t(i)] = sel.index;
        cos_sum += sel.cosine;
        const double* row = bank.chars[size_t(l)].row(sel.index);
        targets[size_t(l)][size_t(i)].assign(row, row + bank.dim);
      }
    }
    std::vector<Vec> dz_align(size_t(n), Vec(size_t(state.embed_dim()), 0.0));
    AlignmentResult ar = alignment_loss(zs, targets, cfg.tau_kl, &dz_align);
    out.alignment = ar.value;
    out.mean_selected_cosine = cos_sum / double(n * kLevelCount);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < state.embed_dim(); ++d)
        dzs[size_t(i)][size_t(d)] += cfg.alignment_weight * dz_align[size_t(i)][size_t(d)];
  }

  encode_views_backward(state, batch.views, ecaches, dzs, out.grads);
  out.total = out.contrastive + cfg.alignment_weight * out.alignment;
  return out;
}

}  // namespace hierssl
