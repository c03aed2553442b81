#include "hierssl/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "hierssl/binio.hpp"
#include "hierssl/rng.hpp"

namespace hierssl {

using json = nlohmann::json;

namespace {

std::string idx_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
  return buf;
}

// Unit-RMS smooth random field: i.i.d. gaussian pixels put through a few 3x3
// box-blur passes (edges clamped). Low-frequency structure that a small conv
// net can pick up.
Vec smooth_field(int h, int w, int c, int passes, Rng& rng) {
  Vec f(size_t(h) * w * c);
  for (double& x : f) x = rng.normal();
  Vec tmp(f.size());
  for (int pass = 0; pass < passes; ++pass) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int yy = std::clamp(y + dy, 0, h - 1);
              int xx = std::clamp(x + dx, 0, w - 1);
              s += f[(size_t(yy) * w + xx) * c + ch];
            }
          tmp[(size_t(y) * w + x) * c + ch] = s / 9.0;
        }
    f.swap(tmp);
  }
  double ss = 0.0;
  for (double x : f) ss += x * x;
  double rms = std::sqrt(ss / double(f.size()));
  if (rms > 1e-12)
    for (double& x : f) x /= rms;
  return f;
}

void check_config(const CorpusConfig& cfg) {
  if (cfg.patients < 1) fail("corpus", "invalid config: patients must be >= 1");
  if (cfg.slides_per_patient < 1) fail("corpus", "invalid config: slides_per_patient must be >= 1");
  if (cfg.patches_per_slide < 1) fail("corpus", "invalid config: patches_per_slide must be >= 1");
  if (cfg.num_classes < 2) fail("corpus", "invalid config: num_classes must be >= 2");
  if (cfg.height < 1 || cfg.width < 1 || cfg.channels < 1)
    fail("corpus", "invalid config: patch shape must be positive");
  if (cfg.class_gap < 0 || cfg.patient_spread < 0 || cfg.slide_spread < 0 ||
      cfg.patch_spread < 0 || cfg.pixel_noise < 0)
    fail("corpus", "invalid config: signal scales must be non-negative");
}

}  // namespace

Corpus generate_synthetic_corpus(const CorpusConfig& cfg, uint64_t seed) {
  check_config(cfg);
  Corpus corpus;
  corpus.num_classes = cfg.num_classes;
  corpus.height = cfg.height;
  corpus.width = cfg.width;
  corpus.channels = cfg.channels;
  corpus.seed = seed;

  const int n = int(corpus.pixel_count());
  std::vector<Vec> class_fields(cfg.num_classes);
  for (int c = 0; c < cfg.num_classes; ++c) {
    Rng rng(derive_seed(seed, kStreamClassField, uint64_t(c)));
    class_fields[c] = smooth_field(cfg.height, cfg.width, cfg.channels, cfg.smooth_passes, rng);
  }

  for (int p = 0; p < cfg.patients; ++p) {
    PatientRecord patient;
    patient.id = idx_id("p", p);
    patient.label = p % cfg.num_classes;  // balanced round-robin labels
    Rng prng(derive_seed(seed, kStreamPatientField, uint64_t(p)));
    Vec patient_field = smooth_field(cfg.height, cfg.width, cfg.channels, cfg.smooth_passes, prng);

    for (int s = 0; s < cfg.slides_per_patient; ++s) {
      SlideRecord slide;
      slide.id = patient.id + "-s" + std::to_string(s);
      slide.patient = int(corpus.patients.size());
      Rng srng(derive_seed(seed, kStreamSlideField, uint64_t(p), uint64_t(s)));
      Vec slide_field = smooth_field(cfg.height, cfg.width, cfg.channels, cfg.smooth_passes, srng);

      for (int k = 0; k < cfg.patches_per_slide; ++k) {
        PatchRecord patch;
        patch.id = slide.id + "-" + idx_id("k", k);
        patch.slide = int(corpus.slides.size());
        uint64_t sg = uint64_t(p) * 100003ull + uint64_t(s) * 1009ull + uint64_t(k);
        Rng krng(derive_seed(seed, kStreamPatchField, sg));
        Vec patch_field = smooth_field(cfg.height, cfg.width, cfg.channels, cfg.smooth_passes, krng);
        Rng nrng(derive_seed(seed, kStreamPixelNoise, sg));

        patch.pixels.resize(size_t(n));
        const Vec& cls = class_fields[patient.label];
        for (int i = 0; i < n; ++i) {
          double v = cfg.class_gap * cls[i] + cfg.patient_spread * patient_field[i] +
                     cfg.slide_spread * slide_field[i] + cfg.patch_spread * patch_field[i] +
                     cfg.pixel_noise * nrng.normal();
          patch.pixels[i] = float(v);  // pixels live on the f32 grid
        }
        slide.patches.push_back(int(corpus.patches.size()));
        corpus.patches.push_back(std::move(patch));
      }
      patient.slides.push_back(int(corpus.slides.size()));
      corpus.slides.push_back(std::move(slide));
    }
    corpus.patients.push_back(std::move(patient));
  }
  corpus.validate();
  return corpus;
}

void Corpus::validate() const {
  if (num_classes < 2) fail("corpus", "num_classes must be >= 2");
  if (height < 1 || width < 1 || channels < 1) fail("corpus", "patch shape must be positive");
  if (patients.empty()) fail("corpus", "corpus has no patients");
  std::unordered_set<std::string> ids;
  auto unique_id = [&](const std::string& id, const char* kind) {
    if (!ids.insert(id).second)
      fail("corpus", std::string("duplicate ") + kind + " id: " + id);
  };
  for (size_t p = 0; p < patients.size(); ++p) {
    const PatientRecord& pa = patients[p];
    unique_id(pa.id, "patient");
    if (pa.label < 0 || pa.label >= num_classes)
      fail("corpus", "patient " + pa.id + " has out-of-range label " + std::to_string(pa.label));
    if (pa.slides.empty()) fail("corpus", "patient " + pa.id + " has no slides");
    for (int s : pa.slides) {
      if (s < 0 || size_t(s) >= slides.size())
        fail("corpus", "patient " + pa.id + " references missing slide index");
      if (slides[s].patient != int(p))
        fail("corpus", "slide " + slides[s].id + " does not point back to patient " + pa.id);
    }
  }
  for (size_t s = 0; s < slides.size(); ++s) {
    const SlideRecord& sl = slides[s];
    unique_id(sl.id, "slide");
    if (sl.patches.empty()) fail("corpus", "slide " + sl.id + " has no patches");
    for (int k : sl.patches) {
      if (k < 0 || size_t(k) >= patches.size())
        fail("corpus", "slide " + sl.id + " references missing patch index");
      if (patches[k].slide != int(s))
        fail("corpus", "patch " + patches[k].id + " does not point back to slide " + sl.id);
    }
  }
  for (const PatchRecord& patch : patches) {
    unique_id(patch.id, "patch");
    if (int64_t(patch.pixels.size()) != pixel_count())
      fail("corpus", "patch " + patch.id + " has wrong pixel count");
    for (float v : patch.pixels)
      if (!std::isfinite(v)) fail("corpus", "patch " + patch.id + " contains non-finite pixels");
  }
}

Corpus subset_corpus(const Corpus& corpus, const std::vector<int>& patient_indices) {
  Corpus out;
  out.num_classes = corpus.num_classes;
  out.height = corpus.height;
  out.width = corpus.width;
  out.channels = corpus.channels;
  out.seed = corpus.seed;
  for (int pi : patient_indices) {
    if (pi < 0 || size_t(pi) >= corpus.patients.size())
      fail("corpus", "subset: patient index out of range: " + std::to_string(pi));
    const PatientRecord& src = corpus.patients[pi];
    PatientRecord patient;
    patient.id = src.id;
    patient.label = src.label;
    for (int si : src.slides) {
      const SlideRecord& ssl = corpus.slides[si];
      SlideRecord slide;
      slide.id = ssl.id;
      slide.patient = int(out.patients.size());
      for (int ki : ssl.patches) {
        PatchRecord patch = corpus.patches[ki];
        patch.slide = int(out.slides.size());
        slide.patches.push_back(int(out.patches.size()));
        out.patches.push_back(std::move(patch));
      }
      patient.slides.push_back(int(out.slides.size()));
      out.slides.push_back(std::move(slide));
    }
    out.patients.push_back(std::move(patient));
  }
  out.validate();
  return out;
}

std::pair<std::vector<int>, std::vector<int>> stratified_patient_split(const Corpus& corpus,
                                                                       double test_frac,
                                                                       uint64_t seed) {
  if (!(test_frac > 0.0 && test_frac < 1.0))
    fail("corpus", "split: test_frac must be in (0,1)");
  std::vector<std::vector<int>> by_class(corpus.num_classes);
  for (size_t p = 0; p < corpus.patients.size(); ++p)
    by_class[corpus.patients[p].label].push_back(int(p));
  Rng rng(derive_seed(seed, kStreamSplit));
  std::vector<int> train, test;
  for (auto& group : by_class) {
    // Fisher-Yates, then the shuffled tail becomes the test side.
    for (size_t i = group.size(); i > 1; --i) {
      size_t j = size_t(rng.uniform_int(i));
      std::swap(group[i - 1], group[j]);
    }
    size_t n_test = size_t(std::lround(test_frac * double(group.size())));
    n_test = std::min(n_test, group.size() > 0 ? group.size() - 1 : size_t(0));
    for (size_t i = 0; i < group.size(); ++i)
      (i < group.size() - n_test ? train : test).push_back(group[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  if (train.empty() || test.empty())
    fail("corpus", "split: both sides must be non-empty (adjust test_frac)");
  return {train, test};
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  json j;
  j["format"] = "corpus-v1";
  j["byte_order"] = "little";
  j["data_file"] = "patches.f32";
  j["num_classes"] = corpus.num_classes;
  j["patch_shape"] = {corpus.height, corpus.width, corpus.channels};
  j["seed"] = corpus.seed;
  json jpatients = json::array();
  for (const PatientRecord& pa : corpus.patients) {
    json jp;
    jp["id"] = pa.id;
    jp["label"] = pa.label;
    json jslides = json::array();
    for (int si : pa.slides) {
      const SlideRecord& sl = corpus.slides[si];
      json js;
      js["id"] = sl.id;
      json jk = json::array();
      for (int ki : sl.patches) jk.push_back(corpus.patches[ki].id);
      js["patches"] = jk;
      jslides.push_back(js);
    }
    jp["slides"] = jslides;
    jpatients.push_back(jp);
  }
  j["patients"] = jpatients;
  write_file_bytes(dir / "corpus.json", j.dump(2) + "\n", "corpus");

  // Pixel blob in manifest (depth-first) patch order.
  std::string bytes;
  bytes.reserve(size_t(4) * corpus.patches.size() * size_t(corpus.pixel_count()));
  Vec tmp(size_t(corpus.pixel_count()));
  for (const PatientRecord& pa : corpus.patients)
    for (int si : pa.slides)
      for (int ki : corpus.slides[si].patches) {
        const PatchRecord& patch = corpus.patches[ki];
        for (size_t i = 0; i < tmp.size(); ++i) tmp[i] = double(patch.pixels[i]);
        append_f32_le(bytes, tmp.data(), tmp.size());
      }
  write_file_bytes(dir / "patches.f32", bytes, "corpus");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const std::filesystem::path manifest = dir / "corpus.json";
  json j;
  try {
    j = json::parse(read_file_bytes(manifest, "corpus"));
  } catch (const json::exception& e) {
    fail("corpus", "cannot parse " + manifest.string() + ": " + e.what());
  }
  Corpus corpus;
  try {
    if (j.at("format") != "corpus-v1") fail("corpus", "unsupported format in " + manifest.string());
    corpus.num_classes = j.at("num_classes").get<int>();
    auto shape = j.at("patch_shape");
    corpus.height = shape.at(0).get<int>();
    corpus.width = shape.at(1).get<int>();
    corpus.channels = shape.at(2).get<int>();
    corpus.seed = j.at("seed").get<uint64_t>();
    for (const json& jp : j.at("patients")) {
      PatientRecord patient;
      patient.id = jp.at("id").get<std::string>();
      patient.label = jp.at("label").get<int>();
      for (const json& js : jp.at("slides")) {
        SlideRecord slide;
        slide.id = js.at("id").get<std::string>();
        slide.patient = int(corpus.patients.size());
        for (const json& jk : js.at("patches")) {
          PatchRecord patch;
          patch.id = jk.get<std::string>();
          patch.slide = int(corpus.slides.size());
          slide.patches.push_back(int(corpus.patches.size()));
          corpus.patches.push_back(std::move(patch));
        }
        patient.slides.push_back(int(corpus.slides.size()));
        corpus.slides.push_back(std::move(slide));
      }
      corpus.patients.push_back(std::move(patient));
    }
  } catch (const json::exception& e) {
    fail("corpus", "malformed manifest " + manifest.string() + ": " + e.what());
  }

  const std::string data_file = j.value("data_file", "patches.f32");
  const size_t n = size_t(corpus.pixel_count());
  Vec blob = read_f32_blob(dir / data_file, corpus.patches.size() * n, "corpus");
  for (size_t k = 0; k < corpus.patches.size(); ++k) {
    corpus.patches[k].pixels.resize(n);
    for (size_t i = 0; i < n; ++i) corpus.patches[k].pixels[i] = float(blob[k * n + i]);
  }
  corpus.validate();
  return corpus;
}

}  // namespace hierssl
