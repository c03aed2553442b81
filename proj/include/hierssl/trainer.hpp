#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "hierssl/corpus.hpp"
#include "hierssl/model.hpp"
#include "hierssl/objectives.hpp"
#include "hierssl/sampler.hpp"
#include "hierssl/textbank.hpp"

namespace hierssl {

// Linear warmup from 0 over ceil(warmup_frac * total) iterations, then cosine
// decay that reaches the peak exactly at the first post-warmup iteration and 0
// exactly at the last one. Degenerate spans (no room to decay) stay at base.
double lr_schedule(double base_lr, int iter, int total_iters, double warmup_frac);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// First and second moment accumulators, flat over all parameters in
// param_views order. step counts completed updates.
struct OptState {
  Vec m, v;
  int64_t step = 0;
};

OptState make_opt_state(ModelState& state);

// One fused AdamW update over `count` coordinates: moment update, bias
// correction with step_after (the 1-based step number this update completes),
// then the moment step and decoupled weight decay, both taken from the
// original w. Pure double math; callers own any rounding policy.
void adamw_update(double* w, const double* g, double* m, double* v, int count,
                  int64_t step_after, const AdamConfig& cfg);

// Applies adamw_update across every parameter tensor. Rejects non-finite
// gradients before touching any state.
void adamw_step(ModelState& state, ModelGrads& grads, OptState& opt, const AdamConfig& cfg);

struct TrainConfig {
  int total_iters = 2000;
  int patient_count = 32;
  int slides_per_patient = 2;   // n_s
  int patches_per_slide = 2;    // n_p
  int augments_per_patch = 2;   // n_a
  double base_lr = 1e-3;
  double warmup_frac = 0.10;
  double tau = 0.7;
  double tau_kl = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 1;
  bool enable_alignment = true;
  int ckpt_every = 500;  // 0 disables periodic checkpoints
  AugmentConfig augment;
  EncoderConfig encoder;
  std::string out_dir;  // empty: train fully in memory, write no files
};

struct IterationStats {
  int iter = 0;
  double lr = 0.0;
  double total = 0.0;
  double contrastive = 0.0;
  std::array<double, kLevelCount> level{};
  std::array<bool, kLevelCount> level_used{};
  double alignment = 0.0;
  double mean_selected_cosine = 0.0;
  double wall_ms = 0.0;
};

using MetricsHook = std::function<void(const IterationStats&)>;

struct TrainResult {
  ModelState state;
  OptState opt;
  int iterations = 0;
};

// Fresh training run: bank-initialized model, AdamW with the cosine schedule,
// one hierarchical batch per iteration drawn from a per-iteration derived RNG
// stream (so any iteration's batch is reproducible without replaying prior
// ones). All persistent state is kept on the float32 grid after every step.
// With out_dir set, writes metrics.jsonl plus periodic and final checkpoints
// (optimizer moments stored alongside the parameters).
TrainResult train(const Corpus& corpus, const TextBank& bank, const TrainConfig& cfg,
                  const MetricsHook& hook = nullptr);

// Continues a checkpointed run to cfg.total_iters. Because batches derive from
// (seed, iteration) alone and state is float32-gridded, the result is
// bit-identical to an uninterrupted run with the same config.
TrainResult resume_train(const std::string& ckpt_dir, const Corpus& corpus, const TextBank& bank,
                         const TrainConfig& cfg, const MetricsHook& hook = nullptr);

}  // namespace hierssl
