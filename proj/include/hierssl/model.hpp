#pragma once
// Representation model: a small reference encoder (two stride-2 3x3 conv+tanh
// stages, then an affine map to the embedding) plus one linear projection head
// per hierarchy level whose rows start as the bank's characteristic embeddings.
// Forward and backward passes are hand-written and fully deterministic; the
// backward is split so gradient accumulation orders never depend on threading.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hierssl/core.hpp"
#include "hierssl/textbank.hpp"

namespace hierssl {

struct EncoderConfig {
  int in_h = 32, in_w = 32, in_c = 3;
  int conv1_channels = 6;
  int conv2_channels = 12;
  int embed_dim = 64;

  // stride-2, pad-1, kernel-3 output sizes
  int h1() const { return (in_h - 1) / 2 + 1; }
  int w1() const { return (in_w - 1) / 2 + 1; }
  int h2() const { return (h1() - 1) / 2 + 1; }
  int w2() const { return (w1() - 1) / 2 + 1; }
  int flat_dim() const { return h2() * w2() * conv2_channels; }
  int64_t view_size() const { return int64_t(in_h) * in_w * in_c; }
};

struct ModelState {
  EncoderConfig enc;
  // conv weights: [out_ch][ky][kx][in_ch]; fc: [embed_dim][flat_dim]
  Vec conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;
  struct Projection {
    Mat w;  // feature_dim x embed_dim
    Vec b;  // feature_dim
  };
  std::array<Projection, kLevelCount> proj;

  int embed_dim() const { return enc.embed_dim; }
  int feature_dim() const { return proj[0].w.rows; }
};

// Gradient buffers, same shapes as the trainable state.
struct ModelGrads {
  Vec conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;
  std::array<ModelState::Projection, kLevelCount> proj;
};
ModelGrads make_grads(const ModelState& state);

// Named views over the trainable arrays, in the fixed serialization order.
struct ParamView {
  std::string name;
  std::vector<int> shape;
  Vec* v;
};
std::vector<ParamView> param_views(ModelState& state);
std::vector<ParamView> grad_views(ModelGrads& grads, ModelState& state);

// Projection rows copied from the bank's characteristic embeddings.
Mat init_projection_from_bank(const TextBank& bank, Level level);

// Random encoder (scaled gaussian fan-in init), bank-initialized projections,
// zero biases. All values on the f32 grid.
ModelState init_model(const EncoderConfig& enc, const TextBank& bank, uint64_t seed);

// ---- encoder ---------------------------------------------------------------

struct EncodeCache {
  Vec a1, a2;  // post-tanh activations of the two conv stages
};

// z = fc(tanh(conv2(tanh(conv1(view))))). view has enc.view_size() doubles.
Vec encode(const ModelState& state, const double* view, EncodeCache* cache = nullptr);
inline Vec encode(const ModelState& state, const Vec& view, EncodeCache* cache = nullptr) {
  return encode(state, view.data(), cache);
}

// Batched forward: caches per view for the batched backward.
std::vector<Vec> encode_views(const ModelState& state, const std::vector<Vec>& views,
                              std::vector<EncodeCache>& caches);

// Batched backward. Accumulates parameter gradients into `grads`; if dviews is
// non-null it receives d(loss)/d(view pixels). Deterministic for any thread count.
void encode_views_backward(const ModelState& state, const std::vector<Vec>& views,
                           const std::vector<EncodeCache>& caches, const std::vector<Vec>& dzs,
                           ModelGrads& grads, std::vector<Vec>* dviews = nullptr);

// ---- projections ------------------------------------------------------------

struct ProjectionCache {
  Vec y;       // pre-normalization W z + b
  double norm = 0.0;
};

// Unit-norm projected feature for `level`; error if W z + b is degenerate.
Vec project(const ModelState& state, Level level, const Vec& z, ProjectionCache* cache = nullptr);

// Backward through normalize(W z + b): accumulates proj grads and (optionally) dz.
void project_backward(const ModelState& state, Level level, const Vec& z,
                      const ProjectionCache& cache, const Vec& df, ModelGrads* grads,
                      Vec* dz_accum);

// ---- alignment selection -----------------------------------------------------

struct CamSelection {
  int index = -1;
  double cosine = 0.0;
};

// Most-similar characteristic (by cosine against the backbone embedding z) of
// the given level; ties resolve to the lowest index. The returned row is a
// constant target: no gradient ever flows back into the bank.
CamSelection cam_select(const TextBank& bank, Level level, const Vec& z);

// ---- checkpoints --------------------------------------------------------------

// Extra named f32 groups stored next to the parameters (optimizer moments).
using ExtraGroups = std::vector<std::pair<std::string, Vec>>;

struct Checkpoint {
  ModelState state;
  int64_t iteration = 0;
  uint64_t seed = 0;
  ExtraGroups extras;
};

void save_checkpoint(const ModelState& state, int64_t iteration, uint64_t seed,
                     const ExtraGroups& extras, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace hierssl
