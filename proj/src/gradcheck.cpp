#include "hierssl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "hierssl/corpus.hpp"
#include "hierssl/model.hpp"
#include "hierssl/objectives.hpp"
#include "hierssl/rng.hpp"
#include "hierssl/sampler.hpp"
#include "hierssl/textbank.hpp"

namespace hierssl {

namespace {

constexpr double kFdStep = 1e-4;

double central_diff(const std::function<double()>& f, double* coord) {
  const double orig = *coord;
  *coord = orig + kFdStep;
  const double fp = f();
  *coord = orig - kFdStep;
  const double fm = f();
  *coord = orig;
  return (fp - fm) / (2.0 * kFdStep);
}

// Collects (analytic, fd) pairs for one audit item and scores them together.
struct ItemProbe {
  std::string name;
  Vec analytic, fd;

  explicit ItemProbe(std::string n) : name(std::move(n)) {}
  void add(double a, double f) {
    analytic.push_back(a);
    fd.push_back(f);
  }
  GradCheckItem finish() const {
    double scale = 1e-8;
    for (double a : analytic) scale = std::max(scale, std::fabs(a));
    for (double f : fd) scale = std::max(scale, std::fabs(f));
    GradCheckItem item;
    item.name = name;
    item.coords = int(analytic.size());
    for (size_t i = 0; i < analytic.size(); ++i)
      item.max_rel_err = std::max(item.max_rel_err, std::fabs(analytic[i] - fd[i]) / scale);
    return item;
  }
};

Mat random_features(int n, int d, Rng& rng) {
  Mat f(n, d);
  for (double& x : f.a) x = rng.normal();
  return f;
}

GradCheckItem audit_supcon(uint64_t seed) {
  Rng rng(derive_seed(seed, kStreamAudit, 1));
  const int n = 6, d = 5;
  Mat f = random_features(n, d, rng);
  const int anchor = 1;
  const std::vector<int> pos = {0, 3, 4};
  const double tau = 0.7;

  SupconResult res = supcon_loss(f, anchor, pos, tau);
  ItemProbe probe("supcon-loss/dfeatures");
  for (size_t idx = 0; idx < f.a.size(); ++idx) {
    double fd = central_diff([&] { return supcon_loss(f, anchor, pos, tau).value; }, &f.a[idx]);
    probe.add(res.dfeatures.a[idx], fd);
  }
  return probe.finish();
}

GradCheckItem audit_level_loss(uint64_t seed) {
  Rng rng(derive_seed(seed, kStreamAudit, 2));
  const int n = 8, d = 6;
  Mat f = random_features(n, d, rng);
  // Two groups of three plus two singletons (skipped anchors).
  const std::vector<std::vector<int>> pos = {{1, 2}, {0, 2}, {0, 1}, {4, 5},
                                             {3, 5}, {3, 4}, {},     {}};
  const double tau = 0.55;

  LevelLossResult res = level_contrastive_loss(f, pos, tau);
  ItemProbe probe("level-contrastive/dfeatures");
  for (size_t idx = 0; idx < f.a.size(); ++idx) {
    double fd =
        central_diff([&] { return level_contrastive_loss(f, pos, tau).value; }, &f.a[idx]);
    probe.add(res.dfeatures.a[idx], fd);
  }
  return probe.finish();
}

GradCheckItem audit_kl(uint64_t seed) {
  Rng rng(derive_seed(seed, kStreamAudit, 3));
  const int d = 9;
  Vec z(static_cast<size_t>(d));
  Vec target(static_cast<size_t>(d));
  for (double& x : z) x = rng.normal();
  for (double& x : target) x = rng.normal();
  const double tau_kl = 0.8;

  KlResult res = kl_align_loss(z, target, tau_kl);
  ItemProbe probe("kl-align/dz");
  for (int i = 0; i < d; ++i) {
    double fd =
        central_diff([&] { return kl_align_loss(z, target, tau_kl).value; }, &z[size_t(i)]);
    probe.add(res.dz[size_t(i)], fd);
  }
  return probe.finish();
}

// Projection spaces + level losses, differentiated through both the projection
// parameters and the backbone embeddings.
std::vector<GradCheckItem> audit_hierarchy(uint64_t seed) {
  Rng rng(derive_seed(seed, kStreamAudit, 4));
  const int dim = 6, chars = 5, n = 6;
  TextBank bank = make_synthetic_bank(dim, chars, derive_seed(seed, kStreamAudit, 40));
  EncoderConfig enc;
  enc.in_h = 8;
  enc.in_w = 8;
  enc.in_c = 1;
  enc.conv1_channels = 2;
  enc.conv2_channels = 3;
  enc.embed_dim = dim;
  ModelState state = init_model(enc, bank, derive_seed(seed, kStreamAudit, 41));

  std::vector<Vec> zs(static_cast<size_t>(n), Vec(static_cast<size_t>(dim)));
  for (Vec& z : zs)
    for (double& x : z) x = rng.normal();

  std::array<std::vector<std::vector<int>>, kLevelCount> pos;
  pos[0] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}, {5}, {4}};      // patient-like
  pos[1] = {{1, 2}, {0, 2}, {0, 1}, {}, {5}, {4}};                      // slide-like
  pos[2] = {{1}, {0}, {}, {}, {5}, {4}};                                // patch-like
  const double tau = 0.7;
  const std::array<double, kLevelCount> weights = {1.0, 0.8, 1.2};

  auto value = [&] {
    return hierarchy_contrastive_loss(state, zs, pos, tau, weights, nullptr, nullptr).total;
  };

  ModelGrads grads = make_grads(state);
  std::vector<Vec> dzs(size_t(n), Vec(size_t(dim), 0.0));
  hierarchy_contrastive_loss(state, zs, pos, tau, weights, &grads, &dzs);

  ItemProbe pp("hierarchy-contrastive/dproj");
  for (int l = 0; l < kLevelCount; ++l) {
    for (size_t idx = 0; idx < state.proj[size_t(l)].w.a.size(); ++idx) {
      double fd = central_diff(value, &state.proj[size_t(l)].w.a[idx]);
      pp.add(grads.proj[size_t(l)].w.a[idx], fd);
    }
    for (size_t idx = 0; idx < state.proj[size_t(l)].b.size(); ++idx) {
      double fd = central_diff(value, &state.proj[size_t(l)].b[idx]);
      pp.add(grads.proj[size_t(l)].b[idx], fd);
    }
  }

  ItemProbe pz("hierarchy-contrastive/dz");
  for (int i = 0; i < n; ++i)
    for (int x = 0; x < dim; ++x) {
      double fd = central_diff(value, &zs[size_t(i)][size_t(x)]);
      pz.add(dzs[size_t(i)][size_t(x)], fd);
    }
  return {pp.finish(), pz.finish()};
}

GradCheckItem audit_alignment(uint64_t seed) {
  Rng rng(derive_seed(seed, kStreamAudit, 5));
  const int n = 3, d = 6;
  std::vector<Vec> zs(static_cast<size_t>(n), Vec(static_cast<size_t>(d)));
  for (Vec& z : zs)
    for (double& x : z) x = rng.normal();
  std::array<std::vector<Vec>, kLevelCount> targets;
  for (int l = 0; l < kLevelCount; ++l) {
    targets[size_t(l)].assign(size_t(n), Vec(size_t(d)));
    for (Vec& t : targets[size_t(l)]) {
      for (double& x : t) x = rng.normal();
      normalize(t, "gradcheck", "audit target");
    }
  }
  const double tau_kl = 1.3;

  std::vector<Vec> dzs(size_t(n), Vec(size_t(d), 0.0));
  alignment_loss(zs, targets, tau_kl, &dzs);
  auto value = [&] { return alignment_loss(zs, targets, tau_kl, nullptr).value; };

  ItemProbe probe("alignment/dz");
  for (int i = 0; i < n; ++i)
    for (int x = 0; x < d; ++x) {
      double fd = central_diff(value, &zs[size_t(i)][size_t(x)]);
      probe.add(dzs[size_t(i)][size_t(x)], fd);
    }
  return probe.finish();
}

// Tiny end-to-end fixture shared by the batch-loss and encoder audits.
struct TinyFixture {
  Corpus corpus;
  TextBank bank;
  ModelState state;
  HierBatch batch;

  explicit TinyFixture(uint64_t seed) {
    CorpusConfig cc;
    cc.patients = 3;
    cc.slides_per_patient = 1;
    cc.patches_per_slide = 2;
    cc.num_classes = 2;
    cc.height = 8;
    cc.width = 8;
    cc.channels = 1;
    corpus = generate_synthetic_corpus(cc, derive_seed(seed, kStreamAudit, 60));
    bank = make_synthetic_bank(6, 5, derive_seed(seed, kStreamAudit, 61));
    EncoderConfig enc;
    enc.in_h = 8;
    enc.in_w = 8;
    enc.in_c = 1;
    enc.conv1_channels = 2;
    enc.conv2_channels = 3;
    enc.embed_dim = 6;
    state = init_model(enc, bank, derive_seed(seed, kStreamAudit, 62));
    AugmentConfig aug;  // defaults exercise flips/shifts/noise
    Rng rng(derive_seed(seed, kStreamAudit, 63));
    batch = sample_hier_batch(corpus, 1, 2, 2, 2, aug, rng);
  }
};

GradCheckItem audit_batch_loss(uint64_t seed) {
  TinyFixture fx(seed);
  LossConfig cfg;
  cfg.tau = 0.7;
  cfg.tau_kl = 0.8;
  cfg.enable_alignment = true;
  cfg.alignment_weight = 0.7;  // exercises the weighted-gradient path
  cfg.level_weights = {1.0, 0.9, 1.1};

  BatchLossResult base = batch_training_loss(fx.state, fx.bank, fx.batch, cfg);
  std::vector<ParamView> pv = param_views(fx.state);
  std::vector<ParamView> gv = grad_views(base.grads, fx.state);

  size_t total = 0;
  for (const ParamView& p : pv) total += p.v->size();
  Rng rng(derive_seed(seed, kStreamAudit, 6));
  auto value = [&] { return batch_training_loss(fx.state, fx.bank, fx.batch, cfg).total; };

  ItemProbe probe("batch-loss/dparams[sampled]");
  const int samples = 32;
  for (int s = 0; s < samples; ++s) {
    size_t g = size_t(rng.uniform_int(total));
    size_t t = 0;
    while (g >= pv[t].v->size()) {
      g -= pv[t].v->size();
      ++t;
    }
    double fd = central_diff(value, pv[t].v->data() + g);
    probe.add((*gv[t].v)[g], fd);
  }
  return probe.finish();
}

GradCheckItem audit_encoder(uint64_t seed) {
  TinyFixture fx(seed);
  const int n = fx.batch.view_count();
  const int d = fx.state.embed_dim();
  Rng rng(derive_seed(seed, kStreamAudit, 7));

  // phi = sum_i w_i . z_i with fixed random w probes every output coordinate.
  std::vector<Vec> w(static_cast<size_t>(n), Vec(static_cast<size_t>(d)));
  for (Vec& wi : w)
    for (double& x : wi) x = rng.normal();

  auto value = [&] {
    std::vector<EncodeCache> caches;
    std::vector<Vec> zs = encode_views(fx.state, fx.batch.views, caches);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += dot(w[size_t(i)].data(), zs[size_t(i)].data(), d);
    return s;
  };

  ModelGrads grads = make_grads(fx.state);
  std::vector<Vec> dviews(size_t(n), Vec(fx.batch.views[0].size(), 0.0));
  {
    std::vector<EncodeCache> caches;
    encode_views(fx.state, fx.batch.views, caches);
    encode_views_backward(fx.state, fx.batch.views, caches, w, grads, &dviews);
  }

  std::vector<ParamView> pv = param_views(fx.state);
  std::vector<ParamView> gv = grad_views(grads, fx.state);

  ItemProbe probe("encoder-backward/dparams+dpixels");
  for (size_t t = 0; t < pv.size(); ++t) {
    if (pv[t].name.rfind("proj.", 0) == 0) continue;  // phi never touches projections
    const int per_tensor = std::min<int>(4, int(pv[t].v->size()));
    for (int s = 0; s < per_tensor; ++s) {
      size_t idx = size_t(rng.uniform_int(pv[t].v->size()));
      double fd = central_diff(value, pv[t].v->data() + idx);
      probe.add((*gv[t].v)[idx], fd);
    }
  }
  for (int s = 0; s < 6; ++s) {
    int i = int(rng.uniform_int(uint64_t(n)));
    size_t idx = size_t(rng.uniform_int(fx.batch.views[0].size()));
    double fd = central_diff(value, &fx.batch.views[size_t(i)][idx]);
    probe.add(dviews[size_t(i)][idx], fd);
  }
  return probe.finish();
}

}  // namespace

GradAuditReport run_gradient_audit(uint64_t seed) {
  GradAuditReport report;
  report.items.push_back(audit_supcon(seed));
  report.items.push_back(audit_level_loss(seed));
  report.items.push_back(audit_kl(seed));
  for (GradCheckItem& item : audit_hierarchy(seed)) report.items.push_back(std::move(item));
  report.items.push_back(audit_alignment(seed));
  report.items.push_back(audit_batch_loss(seed));
  report.items.push_back(audit_encoder(seed));

  for (const GradCheckItem& item : report.items)
    report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
  report.pass = report.max_rel_err < report.tolerance;
  return report;
}

std::string format_audit(const GradAuditReport& report) {
  std::ostringstream os;
  for (const GradCheckItem& item : report.items) {
    os << "  " << item.name << ": max rel err " << item.max_rel_err << " over " << item.coords
       << " coords\n";
  }
  os << "gradient audit " << (report.pass ? "PASS" : "FAIL") << " (max rel err "
     << report.max_rel_err << ", tolerance " << report.tolerance << ")\n";
  return os.str();
}

}  // namespace hierssl
