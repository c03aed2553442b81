#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "hierssl/corpus.hpp"
#include "hierssl/model.hpp"
#include "hierssl/textbank.hpp"
#include "hierssl/trainer.hpp"

using namespace hierssl;
namespace fs = std::filesystem;

namespace {
Corpus trainer_corpus() {
  CorpusConfig cfg;
  cfg.patients = 3;
  cfg.slides_per_patient = 2;
  cfg.patches_per_slide = 2;
  cfg.num_classes = 3;
  cfg.height = 8;
  cfg.width = 8;
  cfg.channels = 1;
  return generate_synthetic_corpus(cfg, 2);
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.total_iters = 4;
  cfg.patient_count = 2;
  cfg.slides_per_patient = 2;
  cfg.patches_per_slide = 2;
  cfg.augments_per_patch = 2;
  cfg.base_lr = 1e-3;
  cfg.seed = 5;
  cfg.ckpt_every = 2;
  cfg.encoder.in_h = 8;
  cfg.encoder.in_w = 8;
  cfg.encoder.in_c = 1;
  cfg.encoder.conv1_channels = 2;
  cfg.encoder.conv2_channels = 3;
  cfg.encoder.embed_dim = 6;
  return cfg;
}

bool states_equal(ModelState& a, ModelState& b) {
  std::vector<ParamView> va = param_views(a);
  std::vector<ParamView> vb = param_views(b);
  if (va.size() != vb.size()) return false;
  for (size_t i = 0; i < va.size(); ++i)
    if (*va[i].v != *vb[i].v) return false;
  return true;
}
}  // namespace

TEST_CASE("lr schedule: warmup ramp, exact peak, exact zero finish") {
  const double base = 3e-3;
  CHECK(lr_schedule(base, 0, 100, 0.1) == 0.0);
  CHECK(lr_schedule(base, 5, 100, 0.1) == doctest::Approx(base * 0.5).epsilon(1e-15));
  CHECK(lr_schedule(base, 10, 100, 0.1) == base);  // warmup end hits the peak exactly
  CHECK(lr_schedule(base, 99, 100, 0.1) == 0.0);   // final iteration is exactly zero
  // halfway through decay (total=91: warmup 10 iters, decay span 80, iter 50)
  CHECK(lr_schedule(base, 50, 91, 0.1) == doctest::Approx(base * 0.5).epsilon(1e-12));
  // monotone up then down
  for (int i = 1; i <= 10; ++i) CHECK(lr_schedule(base, i, 100, 0.1) >= lr_schedule(base, i - 1, 100, 0.1));
  for (int i = 11; i < 100; ++i) CHECK(lr_schedule(base, i, 100, 0.1) <= lr_schedule(base, i - 1, 100, 0.1));
}

TEST_CASE("lr schedule holds the peak when there is no room to decay") {
  const double base = 1e-2;
  // total 5, warmup_frac 0.8 -> 4 warmup iterations, decay span 0
  CHECK(lr_schedule(base, 4, 5, 0.8) == base);
  // warmup covering everything never exceeds the peak
  for (int i = 0; i < 3; ++i) CHECK(lr_schedule(base, i, 3, 1.0) <= base);
}

TEST_CASE("adamw first step with unit gradient moves by about -lr") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  double w = 0.0, g = 1.0, m = 0.0, v = 0.0;
  adamw_update(&w, &g, &m, &v, 1, 1, cfg);
  CHECK(w == doctest::Approx(-0.09999999900000009).epsilon(1e-14));
  CHECK(m == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(v == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("adamw with zero gradient applies pure decoupled decay") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  double w = 0.5, g = 0.0, m = 0.0, v = 0.0;
  adamw_update(&w, &g, &m, &v, 1, 1, cfg);
  CHECK(w == 0.5 * (1.0 - 0.1 * 0.01));  // exact in double
  CHECK(m == 0.0);
  CHECK(v == 0.0);
}

TEST_CASE("adamw step rejects non-finite gradients") {
  Corpus corpus = trainer_corpus();
  TextBank bank = make_synthetic_bank(6, 9, 3);
  TrainConfig cfg = tiny_train_config();
  ModelState s = init_model(cfg.encoder, bank, 1);
  ModelGrads g = make_grads(s);
  OptState opt = make_opt_state(s);
  AdamConfig a;
  g.fc_w[0] = std::nan("");
  CHECK_THROWS(adamw_step(s, g, opt, a));
}

TEST_CASE("training is deterministic and keeps state on the f32 grid") {
  Corpus corpus = trainer_corpus();
  TextBank bank = make_synthetic_bank(6, 9, 3);
  TrainConfig cfg = tiny_train_config();
  std::vector<IterationStats> stats;
  TrainResult r1 = train(corpus, bank, cfg, [&](const IterationStats& st) { stats.push_back(st); });
  TrainResult r2 = train(corpus, bank, cfg);
  CHECK(r1.iterations == 4);
  CHECK(states_equal(r1.state, r2.state));
  CHECK(r1.opt.m == r2.opt.m);
  CHECK(r1.opt.v == r2.opt.v);
  CHECK(r1.opt.step == 4);
  // metrics hook saw every iteration with the scheduled lr
  REQUIRE(stats.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(stats[size_t(i)].iter == i);
    CHECK(stats[size_t(i)].lr == lr_schedule(cfg.base_lr, i, 4, cfg.warmup_frac));
    CHECK(std::isfinite(stats[size_t(i)].total));
  }
  // all persistent state sits on the float32 grid
  for (const ParamView& pv : param_views(r1.state))
    for (double x : *pv.v) CHECK(q32(x) == x);
  for (double x : r1.opt.m) CHECK(q32(x) == x);
  for (double x : r1.opt.v) CHECK(q32(x) == x);
  // a different seed trains to different weights
  TrainConfig other = cfg;
  other.seed = 6;
  TrainResult r3 = train(corpus, bank, other);
  CHECK_FALSE(states_equal(r1.state, r3.state));
}

TEST_CASE("resume from a checkpoint reproduces the uninterrupted run bit-exactly") {
  Corpus corpus = trainer_corpus();
  TextBank bank = make_synthetic_bank(6, 9, 3);
  TrainConfig cfg = tiny_train_config();
  fs::path dir = fs::temp_directory_path() / "hierssl-trainer-test";
  fs::remove_all(dir);
  cfg.out_dir = (dir / "full").string();
  TrainResult full = train(corpus, bank, cfg);

  TrainConfig half = cfg;
  half.out_dir = (dir / "resumed").string();
  TrainResult resumed =
      resume_train((dir / "full" / "ckpt-000002").string(), corpus, bank, half);
  CHECK(resumed.iterations == 4);
  CHECK(states_equal(full.state, resumed.state));
  CHECK(full.opt.m == resumed.opt.m);
  CHECK(full.opt.v == resumed.opt.v);

  // the saved final checkpoint loads back to the in-memory result
  Checkpoint ck = load_checkpoint(dir / "full" / "final");
  CHECK(ck.iteration == 4);
  CHECK(states_equal(full.state, ck.state));

  // resume refuses a mismatched seed
  TrainConfig bad = cfg;
  bad.seed = 99;
  bad.out_dir.clear();
  CHECK_THROWS(resume_train((dir / "full" / "ckpt-000002").string(), corpus, bank, bad));
  fs::remove_all(dir);
}
