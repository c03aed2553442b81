#include "hierssl/model.hpp"

#include <algorithm>
#include <cstring>

#include <nlohmann/json.hpp>

#include "hierssl/binio.hpp"
#include "hierssl/rng.hpp"

namespace hierssl {

using json = nlohmann::json;

ModelGrads make_grads(const ModelState& state) {
  ModelGrads g;
  g.conv1_w.assign(state.conv1_w.size(), 0.0);
  g.conv1_b.assign(state.conv1_b.size(), 0.0);
  g.conv2_w.assign(state.conv2_w.size(), 0.0);
  g.conv2_b.assign(state.conv2_b.size(), 0.0);
  g.fc_w.assign(state.fc_w.size(), 0.0);
  g.fc_b.assign(state.fc_b.size(), 0.0);
  for (int l = 0; l < kLevelCount; ++l) {
    g.proj[size_t(l)].w = Mat(state.proj[size_t(l)].w.rows, state.proj[size_t(l)].w.cols);
    g.proj[size_t(l)].b.assign(state.proj[size_t(l)].b.size(), 0.0);
  }
  return g;
}

std::vector<ParamView> param_views(ModelState& s) {
  const EncoderConfig& e = s.enc;
  std::vector<ParamView> v;
  v.push_back({"conv1.w", {e.conv1_channels, 3, 3, e.in_c}, &s.conv1_w});
  v.push_back({"conv1.b", {e.conv1_channels}, &s.conv1_b});
  v.push_back({"conv2.w", {e.conv2_channels, 3, 3, e.conv1_channels}, &s.conv2_w});
  v.push_back({"conv2.b", {e.conv2_channels}, &s.conv2_b});
  v.push_back({"fc.w", {e.embed_dim, e.flat_dim()}, &s.fc_w});
  v.push_back({"fc.b", {e.embed_dim}, &s.fc_b});
  for (int l = 0; l < kLevelCount; ++l) {
    std::string base = std::string("proj.") + level_name(kLevels[l]);
    v.push_back({base + ".w", {s.proj[size_t(l)].w.rows, s.proj[size_t(l)].w.cols},
                 &s.proj[size_t(l)].w.a});
    v.push_back({base + ".b", {int(s.proj[size_t(l)].b.size())}, &s.proj[size_t(l)].b});
  }
  return v;
}

std::vector<ParamView> grad_views(ModelGrads& g, ModelState& s) {
  std::vector<ParamView> pv = param_views(s);
  Vec* slots[] = {&g.conv1_w, &g.conv1_b, &g.conv2_w, &g.conv2_b, &g.fc_w, &g.fc_b,
                  &g.proj[0].w.a, &g.proj[0].b, &g.proj[1].w.a, &g.proj[1].b,
                  &g.proj[2].w.a, &g.proj[2].b};
  for (size_t i = 0; i < pv.size(); ++i) pv[i].v = slots[i];
  return pv;
}

Mat init_projection_from_bank(const TextBank& bank, Level level) {
  bank.validate();
  return bank.chars[size_t(int(level))];  // copy; rows already unit and on the f32 grid
}

ModelState init_model(const EncoderConfig& enc, const TextBank& bank, uint64_t seed) {
  if (bank.dim != enc.embed_dim)
    fail("model", "bank dim " + std::to_string(bank.dim) + " does not match encoder embed_dim " +
                      std::to_string(enc.embed_dim));
  if (enc.in_h < 4 || enc.in_w < 4) fail("model", "input patches must be at least 4x4");
  ModelState s;
  s.enc = enc;
  Rng rng(derive_seed(seed, kStreamModelInit));
  auto gauss = [&](Vec& v, size_t n, double sd) {
    v.resize(n);
    for (double& x : v) x = q32(sd * rng.normal());
  };
  gauss(s.conv1_w, size_t(enc.conv1_channels) * 9 * enc.in_c,
        std::sqrt(1.0 / (9.0 * enc.in_c)));
  s.conv1_b.assign(size_t(enc.conv1_channels), 0.0);
  gauss(s.conv2_w, size_t(enc.conv2_channels) * 9 * enc.conv1_channels,
        std::sqrt(1.0 / (9.0 * enc.conv1_channels)));
  s.conv2_b.assign(size_t(enc.conv2_channels), 0.0);
  gauss(s.fc_w, size_t(enc.embed_dim) * enc.flat_dim(), std::sqrt(1.0 / enc.flat_dim()));
  s.fc_b.assign(size_t(enc.embed_dim), 0.0);
  for (int l = 0; l < kLevelCount; ++l) {
    s.proj[size_t(l)].w = init_projection_from_bank(bank, kLevels[l]);
    s.proj[size_t(l)].b.assign(size_t(bank.chars_per_level), 0.0);
  }
  return s;
}

// ---- encoder ----------------------------------------------------------------

namespace {

// 3x3 stride-2 pad-1 convolution + tanh, channels-last layout.
void conv_tanh_forward(const double* in, int h, int w, int cin, const double* wgt,
                       const double* bias, int cout, double* out, int oh, int ow) {
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      double* o = out + (size_t(oy) * ow + ox) * cout;
      for (int f = 0; f < cout; ++f) {
        double u = bias[f];
        for (int ky = 0; ky < 3; ++ky) {
          int iy = 2 * oy + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int ix = 2 * ox + kx - 1;
            if (ix < 0 || ix >= w) continue;
            const double* wrow = wgt + ((size_t(f) * 3 + ky) * 3 + kx) * cin;
            const double* irow = in + (size_t(iy) * w + ix) * cin;
            for (int c = 0; c < cin; ++c) u += wrow[c] * irow[c];
          }
        }
        o[f] = std::tanh(u);
      }
    }
}

// d(loss)/d(pre-activation) from d(loss)/d(activation): du = da * (1 - a^2).
void tanh_backward(const double* act, const double* da, double* du, size_t n) {
  for (size_t i = 0; i < n; ++i) du[i] = da[i] * (1.0 - act[i] * act[i]);
}

// d(loss)/d(in) for the conv above, given du (pre-activation grads).
void conv_input_backward(const double* du, int oh, int ow, int cout, const double* wgt, int cin,
                         double* din, int h, int w) {
  std::memset(din, 0, sizeof(double) * size_t(h) * w * cin);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      const double* g = du + (size_t(oy) * ow + ox) * cout;
      for (int ky = 0; ky < 3; ++ky) {
        int iy = 2 * oy + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int ix = 2 * ox + kx - 1;
          if (ix < 0 || ix >= w) continue;
          double* drow = din + (size_t(iy) * w + ix) * cin;
          for (int f = 0; f < cout; ++f) {
            const double* wrow = wgt + ((size_t(f) * 3 + ky) * 3 + kx) * cin;
            for (int c = 0; c < cin; ++c) drow[c] += wrow[c] * g[f];
          }
        }
      }
    }
}

// Weight/bias gradient contribution of several views. Parallel over output
// channels: each (f, ky, kx, c) cell is summed by exactly one thread, in a
// fixed view-major order, so results do not depend on the thread count.
void conv_weight_backward(const std::vector<const double*>& ins,
                          const std::vector<const double*>& dus, int h, int w, int cin, int cout,
                          int oh, int ow, double* dwgt, double* dbias) {
#pragma omp parallel for schedule(static)
  for (int f = 0; f < cout; ++f) {
    double db = 0.0;
    for (size_t v = 0; v < ins.size(); ++v) {
      const double* in = ins[v];
      const double* du = dus[v];
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double g = du[(size_t(oy) * ow + ox) * cout + f];
          db += g;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= w) continue;
              double* wrow = dwgt + ((size_t(f) * 3 + ky) * 3 + kx) * cin;
              const double* irow = in + (size_t(iy) * w + ix) * cin;
              for (int c = 0; c < cin; ++c) wrow[c] += g * irow[c];
            }
          }
        }
    }
    dbias[f] += db;
  }
}

}  // namespace

Vec encode(const ModelState& s, const double* view, EncodeCache* cache) {
  const EncoderConfig& e = s.enc;
  EncodeCache local;
  EncodeCache& c = cache ? *cache : local;
  c.a1.resize(size_t(e.h1()) * e.w1() * e.conv1_channels);
  c.a2.resize(size_t(e.flat_dim()));
  conv_tanh_forward(view, e.in_h, e.in_w, e.in_c, s.conv1_w.data(), s.conv1_b.data(),
                    e.conv1_channels, c.a1.data(), e.h1(), e.w1());
  conv_tanh_forward(c.a1.data(), e.h1(), e.w1(), e.conv1_channels, s.conv2_w.data(),
                    s.conv2_b.data(), e.conv2_channels, c.a2.data(), e.h2(), e.w2());
  Vec z(static_cast<size_t>(e.embed_dim));
  const int flat = e.flat_dim();
  for (int d = 0; d < e.embed_dim; ++d)
    z[size_t(d)] = s.fc_b[size_t(d)] + dot(s.fc_w.data() + size_t(d) * flat, c.a2.data(), flat);
  return z;
}

std::vector<Vec> encode_views(const ModelState& s, const std::vector<Vec>& views,
                              std::vector<EncodeCache>& caches) {
  const int n = int(views.size());
  for (const Vec& v : views)
    if (int64_t(v.size()) != s.enc.view_size())
      fail("model", "encode: view size does not match encoder input shape");
  caches.assign(size_t(n), EncodeCache{});
  std::vector<Vec> zs(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) zs[size_t(i)] = encode(s, views[size_t(i)], &caches[size_t(i)]);
  return zs;
}

void encode_views_backward(const ModelState& s, const std::vector<Vec>& views,
                           const std::vector<EncodeCache>& caches, const std::vector<Vec>& dzs,
                           ModelGrads& g, std::vector<Vec>* dviews) {
  const EncoderConfig& e = s.enc;
  const int n = int(views.size());
  if (caches.size() != size_t(n) || dzs.size() != size_t(n))
    fail("model", "encode backward: cache/grad count mismatch");
  const int flat = e.flat_dim();
  const int a1n = e.h1() * e.w1() * e.conv1_channels;

  // Phase A (parallel over views): push dz back to per-view du2 / du1 buffers.
  std::vector<Vec> du2(static_cast<size_t>(n));
  std::vector<Vec> du1(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
  for (int v = 0; v < n; ++v) {
    const Vec& dz = dzs[size_t(v)];
    Vec dflat(size_t(flat), 0.0);
    for (int d = 0; d < e.embed_dim; ++d) {
      const double* wrow = s.fc_w.data() + size_t(d) * flat;
      double gd = dz[size_t(d)];
      if (gd == 0.0) continue;
      for (int i = 0; i < flat; ++i) dflat[size_t(i)] += wrow[i] * gd;
    }
    du2[size_t(v)].resize(size_t(flat));
    tanh_backward(caches[size_t(v)].a2.data(), dflat.data(), du2[size_t(v)].data(), size_t(flat));
    Vec da1(static_cast<size_t>(a1n));
    conv_input_backward(du2[size_t(v)].data(), e.h2(), e.w2(), e.conv2_channels, s.conv2_w.data(),
                        e.conv1_channels, da1.data(), e.h1(), e.w1());
    du1[size_t(v)].resize(size_t(a1n));
    tanh_backward(caches[size_t(v)].a1.data(), da1.data(), du1[size_t(v)].data(), size_t(a1n));
    if (dviews) {
      (*dviews)[size_t(v)].assign(size_t(e.view_size()), 0.0);
      conv_input_backward(du1[size_t(v)].data(), e.h1(), e.w1(), e.conv1_channels, s.conv1_w.data(),
                          e.in_c, (*dviews)[size_t(v)].data(), e.in_h, e.in_w);
    }
  }

  // Phase B: parameter gradients, each output element owned by one thread.
#pragma omp parallel for schedule(static)
  for (int d = 0; d < e.embed_dim; ++d) {
    double* wrow = g.fc_w.data() + size_t(d) * flat;
    double db = 0.0;
    for (int v = 0; v < n; ++v) {
      double gd = dzs[size_t(v)][size_t(d)];
      db += gd;
      if (gd == 0.0) continue;
      const double* a2 = caches[size_t(v)].a2.data();
      for (int i = 0; i < flat; ++i) wrow[i] += gd * a2[i];
    }
    g.fc_b[size_t(d)] += db;
  }

  std::vector<const double*> in_ptrs(static_cast<size_t>(n));
  std::vector<const double*> du_ptrs(static_cast<size_t>(n));
  for (int v = 0; v < n; ++v) {
    in_ptrs[size_t(v)] = caches[size_t(v)].a1.data();
    du_ptrs[size_t(v)] = du2[size_t(v)].data();
  }
  conv_weight_backward(in_ptrs, du_ptrs, e.h1(), e.w1(), e.conv1_channels, e.conv2_channels,
                       e.h2(), e.w2(), g.conv2_w.data(), g.conv2_b.data());
  for (int v = 0; v < n; ++v) {
    in_ptrs[size_t(v)] = views[size_t(v)].data();
    du_ptrs[size_t(v)] = du1[size_t(v)].data();
  }
  conv_weight_backward(in_ptrs, du_ptrs, e.in_h, e.in_w, e.in_c, e.conv1_channels, e.h1(), e.w1(),
                       g.conv1_w.data(), g.conv1_b.data());
}

// ---- projections --------------------------------------------------------------

Vec project(const ModelState& s, Level level, const Vec& z, ProjectionCache* cache) {
  const ModelState::Projection& p = s.proj[size_t(int(level))];
  if (int(z.size()) != p.w.cols)
    fail("model", "project: embedding size does not match projection input");
  ProjectionCache local;
  ProjectionCache& c = cache ? *cache : local;
  const int m = p.w.rows;
  c.y.resize(size_t(m));
  for (int k = 0; k < m; ++k) c.y[size_t(k)] = p.b[size_t(k)] + dot(p.w.row(k), z.data(), p.w.cols);
  c.norm = norm2(c.y);
  if (!(c.norm >= 1e-8))
    fail("model", std::string("projected feature is degenerate (norm < 1e-8) at level ") +
                      level_name(level));
  Vec f(static_cast<size_t>(m));
  for (int k = 0; k < m; ++k) f[size_t(k)] = c.y[size_t(k)] / c.norm;
  return f;
}

void project_backward(const ModelState& s, Level level, const Vec& z, const ProjectionCache& c,
                      const Vec& df, ModelGrads* grads, Vec* dz_accum) {
  const ModelState::Projection& p = s.proj[size_t(int(level))];
  const int m = p.w.rows, d = p.w.cols;
  // f = y / |y|  =>  dy = (df - (f . df) f) / |y|
  double fdot = 0.0;
  for (int k = 0; k < m; ++k) fdot += (c.y[size_t(k)] / c.norm) * df[size_t(k)];
  Vec dy(static_cast<size_t>(m));
  for (int k = 0; k < m; ++k)
    dy[size_t(k)] = (df[size_t(k)] - fdot * c.y[size_t(k)] / c.norm) / c.norm;
  if (grads) {
    ModelState::Projection& gp = grads->proj[size_t(int(level))];
    for (int k = 0; k < m; ++k) {
      double gk = dy[size_t(k)];
      gp.b[size_t(k)] += gk;
      if (gk == 0.0) continue;
      double* grow = gp.w.row(k);
      for (int j = 0; j < d; ++j) grow[j] += gk * z[size_t(j)];
    }
  }
  if (dz_accum) {
    for (int k = 0; k < m; ++k) {
      double gk = dy[size_t(k)];
      if (gk == 0.0) continue;
      const double* wrow = p.w.row(k);
      for (int j = 0; j < d; ++j) (*dz_accum)[size_t(j)] += wrow[j] * gk;
    }
  }
}

// ---- alignment selection ---------------------------------------------------------

CamSelection cam_select(const TextBank& bank, Level level, const Vec& z) {
  if (int(z.size()) != bank.dim)
    fail("model", "cam_select: embedding size does not match bank dim");
  double zn = norm2(z);
  if (!(zn >= 1e-8)) fail("model", "cam_select: embedding has (near) zero norm");
  const Mat& rows = bank.chars[size_t(int(level))];
  CamSelection best;
  for (int k = 0; k < rows.rows; ++k) {
    double cosine = dot(rows.row(k), z.data(), bank.dim) / (zn * norm2(rows.row(k), bank.dim));
    if (k == 0 || cosine > best.cosine) {
      best.index = k;  // strict > keeps the lowest index on exact ties
      best.cosine = cosine;
    }
  }
  return best;
}

// ---- checkpoints ---------------------------------------------------------------

void save_checkpoint(const ModelState& state, int64_t iteration, uint64_t seed,
                     const ExtraGroups& extras, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ModelState& s = const_cast<ModelState&>(state);
  std::vector<ParamView> pv = param_views(s);

  json j;
  j["format"] = "ckpt-v1";
  j["byte_order"] = "little";
  j["data_file"] = "ckpt.f32";
  j["iteration"] = iteration;
  j["seed"] = seed;
  j["rng"] = {{"scheme", "per-iteration-derived"}, {"seed", seed}, {"next_iter", iteration}};
  j["patch_shape"] = {state.enc.in_h, state.enc.in_w, state.enc.in_c};
  j["encoder"] = {{"conv1_channels", state.enc.conv1_channels},
                  {"conv2_channels", state.enc.conv2_channels},
                  {"embed_dim", state.enc.embed_dim}};
  j["feature_dim"] = state.feature_dim();
  json groups = json::array();
  int64_t offset = 0;
  std::vector<const Vec*> parts;
  auto add_group = [&](const std::string& name, const std::vector<int>& shape, const Vec* v) {
    json g;
    g["name"] = name;
    g["shape"] = shape;
    g["offset"] = offset;
    g["count"] = int64_t(v->size());
    groups.push_back(g);
    offset += int64_t(v->size());
    parts.push_back(v);
  };
  for (const ParamView& p : pv) add_group(p.name, p.shape, p.v);
  for (const auto& [name, v] : extras) add_group(name, {int(v.size())}, &v);
  j["groups"] = groups;
  write_file_bytes(dir / "ckpt.json", j.dump(2) + "\n", "model");
  write_f32_blob(dir / "ckpt.f32", parts, "model");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const std::filesystem::path manifest = dir / "ckpt.json";
  json j;
  try {
    j = json::parse(read_file_bytes(manifest, "model"));
  } catch (const json::exception& e) {
    fail("model", "cannot parse " + manifest.string() + ": " + e.what());
  }
  Checkpoint ck;
  try {
    if (j.at("format") != "ckpt-v1") fail("model", "unsupported format in " + manifest.string());
    ck.iteration = j.at("iteration").get<int64_t>();
    ck.seed = j.at("seed").get<uint64_t>();
    auto shape = j.at("patch_shape");
    EncoderConfig e;
    e.in_h = shape.at(0).get<int>();
    e.in_w = shape.at(1).get<int>();
    e.in_c = shape.at(2).get<int>();
    e.conv1_channels = j.at("encoder").at("conv1_channels").get<int>();
    e.conv2_channels = j.at("encoder").at("conv2_channels").get<int>();
    e.embed_dim = j.at("encoder").at("embed_dim").get<int>();
    const int feature_dim = j.at("feature_dim").get<int>();
    ck.state.enc = e;
    ck.state.conv1_w.resize(size_t(e.conv1_channels) * 9 * e.in_c);
    ck.state.conv1_b.resize(size_t(e.conv1_channels));
    ck.state.conv2_w.resize(size_t(e.conv2_channels) * 9 * e.conv1_channels);
    ck.state.conv2_b.resize(size_t(e.conv2_channels));
    ck.state.fc_w.resize(size_t(e.embed_dim) * e.flat_dim());
    ck.state.fc_b.resize(size_t(e.embed_dim));
    for (int l = 0; l < kLevelCount; ++l) {
      ck.state.proj[size_t(l)].w = Mat(feature_dim, e.embed_dim);
      ck.state.proj[size_t(l)].b.assign(size_t(feature_dim), 0.0);
    }

    std::vector<ParamView> pv = param_views(ck.state);
    int64_t total = 0;
    for (const json& g : j.at("groups")) total += g.at("count").get<int64_t>();
    Vec blob = read_f32_blob(dir / j.value("data_file", "ckpt.f32"), size_t(total), "model");

    size_t next_param = 0;
    for (const json& g : j.at("groups")) {
      const std::string name = g.at("name").get<std::string>();
      const int64_t offset = g.at("offset").get<int64_t>();
      const int64_t count = g.at("count").get<int64_t>();
      if (offset < 0 || offset + count > total)
        fail("model", "group " + name + " has out-of-range offsets in " + manifest.string());
      if (next_param < pv.size() && name == pv[next_param].name) {
        if (int64_t(pv[next_param].v->size()) != count)
          fail("model", "group " + name + " count mismatch in " + manifest.string());
        std::copy(blob.begin() + offset, blob.begin() + offset + count,
                  pv[next_param].v->begin());
        ++next_param;
      } else {
        Vec extra(static_cast<size_t>(count));
        std::copy(blob.begin() + offset, blob.begin() + offset + count, extra.begin());
        ck.extras.emplace_back(name, std::move(extra));
      }
    }
    if (next_param != pv.size())
      fail("model", "checkpoint is missing parameter groups (found " +
                        std::to_string(next_param) + " of " + std::to_string(pv.size()) + ") in " +
                        manifest.string());
  } catch (const json::exception& e) {
    fail("model", "malformed manifest " + manifest.string() + ": " + e.what());
  }
  for (ParamView& p : param_views(ck.state))
    if (!all_finite(*p.v))
      fail("model", "non-finite values in parameter group " + p.name + " of " + dir.string());
  return ck;
}

}  // namespace hierssl
