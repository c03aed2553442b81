#include "hierssl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "hierssl/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace hierssl {

double lr_schedule(double base_lr, int iter, int total_iters, double warmup_frac) {
  if (total_iters < 1) fail("trainer", "total_iters must be >= 1");
  if (iter < 0 || iter >= total_iters) fail("trainer", "iteration outside schedule range");
  if (!(warmup_frac >= 0.0) || !(warmup_frac <= 1.0))
    fail("trainer", "warmup_frac must lie in [0, 1]");
  const int warm = int(std::ceil(warmup_frac * double(total_iters)));
  if (iter < warm) return base_lr * double(iter) / double(warm);
  const int decay_len = total_iters - 1 - warm;
  if (decay_len <= 0) return base_lr;  // no room to decay: hold the peak
  const double p = double(iter - warm) / double(decay_len);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * p));
}

OptState make_opt_state(ModelState& state) {
  size_t total = 0;
  for (const ParamView& pv : param_views(state)) total += pv.v->size();
  OptState opt;
  opt.m.assign(total, 0.0);
  opt.v.assign(total, 0.0);
  return opt;
}

void adamw_update(double* w, const double* g, double* m, double* v, int count,
                  int64_t step_after, const AdamConfig& cfg) {
  if (step_after < 1) fail("trainer", "adamw step number must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_after));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_after));
  for (int i = 0; i < count; ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double w0 = w[i];
    w[i] = w0 - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps) - cfg.lr * cfg.weight_decay * w0;
  }
}

void adamw_step(ModelState& state, ModelGrads& grads, OptState& opt, const AdamConfig& cfg) {
  std::vector<ParamView> ps = param_views(state);
  std::vector<ParamView> gs = grad_views(grads, state);
  if (ps.size() != gs.size()) fail("trainer", "parameter/gradient view mismatch");
  size_t total = 0;
  for (size_t t = 0; t < ps.size(); ++t) {
    if (ps[t].v->size() != gs[t].v->size())
      fail("trainer", "gradient shape mismatch for " + ps[t].name);
    if (!all_finite(*gs[t].v)) fail("trainer", "non-finite gradient in " + ps[t].name);
    total += ps[t].v->size();
  }
  if (opt.m.size() != total || opt.v.size() != total)
    fail("trainer", "optimizer state size does not match parameter count");

  opt.step += 1;
  size_t off = 0;
  for (size_t t = 0; t < ps.size(); ++t) {
    const int count = int(ps[t].v->size());
    adamw_update(ps[t].v->data(), gs[t].v->data(), opt.m.data() + off, opt.v.data() + off, count,
                 opt.step, cfg);
    off += size_t(count);
  }
}

namespace {

void quantize_all_state(ModelState& state, OptState& opt) {
  for (ParamView& pv : param_views(state)) q32_all(*pv.v);
  q32_all(opt.m);
  q32_all(opt.v);
}

class MetricsWriter {
 public:
  void open(const fs::path& path, bool append) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) fail("trainer", "cannot open metrics file " + path.string());
    enabled_ = true;
  }
  void write(const IterationStats& st) {
    if (!enabled_) return;
    ordered_json j;
    j["iter"] = st.iter;
    j["lr"] = st.lr;
    j["loss_total"] = st.total;
    j["loss_hvc"] = st.contrastive;
    j["loss_patch"] = st.level[size_t(Level::Patch)];
    j["loss_slide"] = st.level[size_t(Level::Slide)];
    j["loss_patient"] = st.level[size_t(Level::Patient)];
    j["loss_ha"] = st.alignment;
    j["wall_ms"] = st.wall_ms;
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
  bool enabled_ = false;
};

std::string ckpt_dir_name(int64_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-%06lld", static_cast<long long>(iteration));
  return buf;
}

void save_with_moments(const ModelState& state, const OptState& opt, int64_t iteration,
                       uint64_t seed, const fs::path& dir) {
  ExtraGroups extras;
  extras.emplace_back("adam_m", opt.m);
  extras.emplace_back("adam_v", opt.v);
  save_checkpoint(state, iteration, seed, extras, dir);
}

TrainResult run_loop(ModelState state, OptState opt, int start_iter, const Corpus& corpus,
                     const TextBank& bank, const TrainConfig& cfg, const MetricsHook& hook,
                     bool append_metrics) {
  if (cfg.total_iters < 1) fail("trainer", "total_iters must be >= 1");
  if (start_iter > cfg.total_iters)
    fail("trainer", "checkpoint iteration " + std::to_string(start_iter) +
                        " is past total_iters " + std::to_string(cfg.total_iters));

  LossConfig loss_cfg;
  loss_cfg.tau = cfg.tau;
  loss_cfg.tau_kl = cfg.tau_kl;
  loss_cfg.enable_alignment = cfg.enable_alignment;

  AdamConfig adam;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.eps = cfg.eps;
  adam.weight_decay = cfg.weight_decay;

  MetricsWriter metrics;
  const bool persist = !cfg.out_dir.empty();
  if (persist) {
    fs::create_directories(cfg.out_dir);
    metrics.open(fs::path(cfg.out_dir) / "metrics.jsonl", append_metrics);
  }

  std::array<bool, kLevelCount> warned_skip{};
  for (int iter = start_iter; iter < cfg.total_iters; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(cfg.base_lr, iter, cfg.total_iters, cfg.warmup_frac);

    Rng rng(derive_seed(cfg.seed, kStreamIteration, uint64_t(iter)));
    HierBatch batch = sample_hier_batch(corpus, cfg.slides_per_patient, cfg.patches_per_slide,
                                        cfg.augments_per_patch, cfg.patient_count, cfg.augment,
                                        rng);
    BatchLossResult loss = batch_training_loss(state, bank, batch, loss_cfg);
    if (!std::isfinite(loss.total))
      fail("trainer", "non-finite loss at iteration " + std::to_string(iter) +
                          " (contrastive=" + std::to_string(loss.contrastive) +
                          ", alignment=" + std::to_string(loss.alignment) + ")");

    for (int l = 0; l < kLevelCount; ++l)
      if (!loss.level_used[size_t(l)] && !warned_skip[size_t(l)]) {
        warned_skip[size_t(l)] = true;
        std::cerr << "[trainer] warning: " << level_name(kLevels[size_t(l)])
                  << "-level loss skipped at iteration " << iter
                  << " (no anchor had positives); batch sizes may be degenerate\n";
      }

    adam.lr = lr;
    adamw_step(state, loss.grads, opt, adam);
    quantize_all_state(state, opt);

    IterationStats st;
    st.iter = iter;
    st.lr = lr;
    st.total = loss.total;
    st.contrastive = loss.contrastive;
    st.level = loss.level;
    st.level_used = loss.level_used;
    st.alignment = loss.alignment;
    st.mean_selected_cosine = loss.mean_selected_cosine;
    st.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    metrics.write(st);
    if (hook) hook(st);

    const int64_t done = int64_t(iter) + 1;
    if (persist && cfg.ckpt_every > 0 && done % cfg.ckpt_every == 0 && done < cfg.total_iters)
      save_with_moments(state, opt, done, cfg.seed, fs::path(cfg.out_dir) / ckpt_dir_name(done));
  }

  if (persist)
    save_with_moments(state, opt, cfg.total_iters, cfg.seed, fs::path(cfg.out_dir) / "final");

  TrainResult res;
  res.state = std::move(state);
  res.opt = std::move(opt);
  res.iterations = cfg.total_iters;
  return res;
}

}  // namespace

TrainResult train(const Corpus& corpus, const TextBank& bank, const TrainConfig& cfg,
                  const MetricsHook& hook) {
  ModelState state = init_model(cfg.encoder, bank, cfg.seed);
  OptState opt = make_opt_state(state);
  quantize_all_state(state, opt);  // init already rounds, but pin the invariant
  return run_loop(std::move(state), std::move(opt), 0, corpus, bank, cfg, hook,
                  /*append_metrics=*/false);
}

TrainResult resume_train(const std::string& ckpt_dir, const Corpus& corpus, const TextBank& bank,
                         const TrainConfig& cfg, const MetricsHook& hook) {
  Checkpoint ck = load_checkpoint(ckpt_dir);
  if (ck.seed != cfg.seed)
    fail("trainer", "checkpoint seed " + std::to_string(ck.seed) +
                        " does not match configured seed " + std::to_string(cfg.seed));
  const EncoderConfig& a = ck.state.enc;
  const EncoderConfig& b = cfg.encoder;
  if (a.in_h != b.in_h || a.in_w != b.in_w || a.in_c != b.in_c ||
      a.conv1_channels != b.conv1_channels || a.conv2_channels != b.conv2_channels ||
      a.embed_dim != b.embed_dim)
    fail("trainer", "checkpoint encoder shape does not match the configured encoder");

  OptState opt = make_opt_state(ck.state);
  const size_t total = opt.m.size();
  bool got_m = false, got_v = false;
  for (auto& [name, values] : ck.extras) {
    if (name == "adam_m") {
      if (values.size() != total) fail("trainer", "adam_m size mismatch in checkpoint");
      opt.m = std::move(values);
      got_m = true;
    } else if (name == "adam_v") {
      if (values.size() != total) fail("trainer", "adam_v size mismatch in checkpoint");
      opt.v = std::move(values);
      got_v = true;
    }
  }
  if (!got_m || !got_v) fail("trainer", "checkpoint lacks optimizer moments; cannot resume");
  opt.step = ck.iteration;

  return run_loop(std::move(ck.state), std::move(opt), int(ck.iteration), corpus, bank, cfg, hook,
                  /*append_metrics=*/true);
}

}  // namespace hierssl
