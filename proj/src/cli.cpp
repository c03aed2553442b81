#include "hierssl/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "hierssl/binio.hpp"
#include "hierssl/corpus.hpp"
#include "hierssl/evalkit.hpp"
#include "hierssl/gradcheck.hpp"
#include "hierssl/model.hpp"
#include "hierssl/rng.hpp"
#include "hierssl/textbank.hpp"
#include "hierssl/trainer.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace hierssl {

namespace {

// ---- run manifest -----------------------------------------------------------
//
// Every command that writes artifacts drops a manifest.json in its output
// directory: the command, its full config, input hashes, and (after the work
// finishes) output hashes. No timestamps, so identical runs produce identical
// manifests. metrics.jsonl is hashed with its wall_ms fields stripped; wall
// time is the one legitimately nondeterministic output.

std::string metrics_stripped_hash(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail("cli", "cannot open metrics file " + path.string());
  std::string canon, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line);
    j.erase("wall_ms");
    canon += j.dump();
    canon += '\n';
  }
  return to_hex(fnv1a64(canon));
}

std::string output_hash(const fs::path& path) {
  if (path.filename() == "metrics.jsonl") return metrics_stripped_hash(path);
  return file_hash_hex(path, "cli");
}

struct Manifest {
  std::string command;
  uint64_t seed = 0;
  ordered_json config = ordered_json::object();
  std::vector<fs::path> inputs;    // existing files, hashed immediately
  std::vector<std::string> outputs;  // paths relative to the output directory

  ordered_json render(const fs::path& out_dir, bool with_output_hashes) const {
    ordered_json j;
    j["format"] = "manifest-v1";
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    ordered_json in = ordered_json::array();
    for (const fs::path& p : inputs) {
      ordered_json e;
      e["path"] = p.string();
      e["fnv1a64"] = file_hash_hex(p, "cli");
      in.push_back(std::move(e));
    }
    j["inputs"] = std::move(in);
    ordered_json out = ordered_json::array();
    for (const std::string& rel : outputs) {
      ordered_json e;
      e["path"] = rel;
      if (with_output_hashes)
        e["fnv1a64"] = output_hash(out_dir / rel);
      else
        e["fnv1a64"] = nullptr;
      out.push_back(std::move(e));
    }
    j["outputs"] = std::move(out);
    return j;
  }

  void write(const fs::path& out_dir, bool with_output_hashes) const {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "manifest.json", std::ios::trunc);
    if (!f) fail("cli", "cannot write manifest in " + out_dir.string());
    f << render(out_dir, with_output_hashes).dump(2) << "\n";
  }
};

// On resume, the original manifest's input hashes must still match the files.
void verify_manifest_inputs(const fs::path& out_dir, const Manifest& now) {
  const fs::path mpath = out_dir / "manifest.json";
  if (!fs::exists(mpath)) return;
  std::ifstream in(mpath);
  ordered_json old;
  try {
    in >> old;
  } catch (const std::exception& e) {
    fail("cli", "existing manifest " + mpath.string() + " is unreadable: " + e.what());
  }
  if (!old.contains("inputs")) return;
  for (const auto& e : old["inputs"]) {
    const std::string path = e.value("path", "");
    const std::string recorded = e.value("fnv1a64", "");
    for (const fs::path& p : now.inputs) {
      if (p.string() != path) continue;
      const std::string current = file_hash_hex(p, "cli");
      if (current != recorded)
        fail("cli", "input " + path + " changed since the original run (hash " + recorded +
                        " -> " + current + "); refusing to resume");
    }
  }
}

std::vector<fs::path> corpus_files(const fs::path& dir) {
  return {dir / "corpus.json", dir / "patches.f32"};
}
std::vector<fs::path> bank_files(const fs::path& dir) {
  return {dir / "bank.json", dir / "bank.f32"};
}
std::vector<fs::path> ckpt_files(const fs::path& dir) {
  return {dir / "ckpt.json", dir / "ckpt.f32"};
}

void append_inputs(Manifest& m, const std::vector<fs::path>& files) {
  m.inputs.insert(m.inputs.end(), files.begin(), files.end());
}

// ---- gen-data -----------------------------------------------------------------

struct GenDataArgs {
  int patients = 24, slides = 2, patches = 8, classes = 3;
  int hw = 32, channels = 3;
  uint64_t seed = 1;
  double test_frac = 0.0;
  std::string out = "corpus";
};

int cmd_gen_data(const GenDataArgs& a) {
  CorpusConfig cc;
  cc.patients = a.patients;
  cc.slides_per_patient = a.slides;
  cc.patches_per_slide = a.patches;
  cc.num_classes = a.classes;
  cc.height = a.hw;
  cc.width = a.hw;
  cc.channels = a.channels;

  Manifest m;
  m.command = "gen-data";
  m.seed = a.seed;
  m.config = {{"patients", a.patients},   {"slides_per_patient", a.slides},
              {"patches_per_slide", a.patches}, {"num_classes", a.classes},
              {"height", a.hw},           {"width", a.hw},
              {"channels", a.channels},   {"test_frac", a.test_frac},
              {"patch_count", a.patients * a.slides * a.patches}};
  m.outputs = {"corpus.json", "patches.f32"};
  if (a.test_frac > 0.0) {
    m.outputs.push_back("train/corpus.json");
    m.outputs.push_back("train/patches.f32");
    m.outputs.push_back("test/corpus.json");
    m.outputs.push_back("test/patches.f32");
  }
  m.write(a.out, /*with_output_hashes=*/false);

  Corpus corpus = generate_synthetic_corpus(cc, a.seed);
  save_corpus(corpus, a.out);
  if (a.test_frac > 0.0) {
    auto [train_idx, test_idx] = stratified_patient_split(corpus, a.test_frac, a.seed);
    save_corpus(subset_corpus(corpus, train_idx), fs::path(a.out) / "train");
    save_corpus(subset_corpus(corpus, test_idx), fs::path(a.out) / "test");
    std::cout << "split: " << train_idx.size() << " train / " << test_idx.size()
              << " test patients\n";
  }
  m.write(a.out, /*with_output_hashes=*/true);

  std::cout << "wrote " << corpus.patients.size() << " patients, " << corpus.slides.size()
            << " slides, " << corpus.patches.size() << " patches to " << a.out << "\n";
  return 0;
}

// ---- prompts --------------------------------------------------------------------

int cmd_prompts(const std::string& dataset, const std::string& out) {
  Manifest m;
  m.command = "prompts";
  m.config = {{"dataset", dataset}};
  m.outputs = {"patient.txt", "slide.txt", "patch.txt"};
  m.write(out, false);
  for (Level lv : kLevels) {
    std::ofstream f(fs::path(out) / (std::string(level_name(lv)) + ".txt"), std::ios::trunc);
    if (!f) fail("cli", "cannot write prompt file in " + out);
    bool first = true;
    for (const std::string& stage : llm_prompt_templates(lv, dataset)) {
      if (!first) f << "\n----\n\n";
      first = false;
      f << stage << "\n";
    }
  }
  m.write(out, true);
  std::cout << "wrote patient.txt, slide.txt, patch.txt to " << out << "\n";
  return 0;
}

// ---- gen-bank --------------------------------------------------------------------

struct GenBankArgs {
  int dim = 64, chars = 128;
  uint64_t seed = 1;
  std::string dataset = "synthetic";
  std::string out = "bank";
};

int cmd_gen_bank(const GenBankArgs& a) {
  Manifest m;
  m.command = "gen-bank";
  m.seed = a.seed;
  m.config = {{"dim", a.dim}, {"chars_per_level", a.chars}, {"dataset", a.dataset}};
  m.outputs = {"bank.json", "bank.f32"};
  m.write(a.out, false);

  TextBank bank = make_synthetic_bank(a.dim, a.chars, a.seed, a.dataset);
  save_bank(bank, a.out);
  m.write(a.out, true);
  std::cout << "wrote bank with " << a.chars << " characteristics/level, dim " << a.dim << " to "
            << a.out << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string corpus, bank, out = "run";
  std::string resume;  // checkpoint directory
  int iters = 2000;
  double lr = 1e-3;
  double tau = 0.7;
  double tau_kl = 1.0;
  double warmup_frac = 0.10;
  double weight_decay = 0.01;
  int patients_per_batch = 32;
  int ns = 2, np = 2, na = 2;
  uint64_t seed = 1;
  int ckpt_every = 500;
  bool no_ha = false;
  bool allow_nonstandard_bank = false;
  double aug_noise = 0.30;
  double flip_prob = 0.5;
  int aug_shift = 2;
  int embed_dim = 64;
  int conv1 = 6, conv2 = 12;
};

int cmd_train(const TrainArgs& a) {
  Corpus corpus = load_corpus(a.corpus);
  TextBank bank = load_bank(a.bank, a.allow_nonstandard_bank);

  TrainConfig cfg;
  cfg.total_iters = a.iters;
  cfg.patient_count = a.patients_per_batch;
  cfg.slides_per_patient = a.ns;
  cfg.patches_per_slide = a.np;
  cfg.augments_per_patch = a.na;
  cfg.base_lr = a.lr;
  cfg.warmup_frac = a.warmup_frac;
  cfg.tau = a.tau;
  cfg.tau_kl = a.tau_kl;
  cfg.weight_decay = a.weight_decay;
  cfg.seed = a.seed;
  cfg.enable_alignment = !a.no_ha;
  cfg.ckpt_every = a.ckpt_every;
  cfg.augment.noise_sd = a.aug_noise;
  cfg.augment.flip_prob = a.flip_prob;
  cfg.augment.max_shift = a.aug_shift;
  cfg.encoder.in_h = corpus.height;
  cfg.encoder.in_w = corpus.width;
  cfg.encoder.in_c = corpus.channels;
  cfg.encoder.conv1_channels = a.conv1;
  cfg.encoder.conv2_channels = a.conv2;
  cfg.encoder.embed_dim = a.embed_dim;
  cfg.out_dir = a.out;

  Manifest m;
  m.command = "train";
  m.seed = a.seed;
  m.config = {{"iters", a.iters},
              {"lr", a.lr},
              {"tau", a.tau},
              {"tau_kl", a.tau_kl},
              {"warmup_frac", a.warmup_frac},
              {"weight_decay", a.weight_decay},
              {"patients_per_batch", a.patients_per_batch},
              {"ns", a.ns},
              {"np", a.np},
              {"na", a.na},
              {"ha", !a.no_ha},
              {"ckpt_every", a.ckpt_every},
              {"aug_noise", a.aug_noise},
              {"flip_prob", a.flip_prob},
              {"aug_shift", a.aug_shift},
              {"embed_dim", a.embed_dim},
              {"conv1_channels", a.conv1},
              {"conv2_channels", a.conv2},
              {"corpus", a.corpus},
              {"bank", a.bank},
              {"resume", a.resume}};
  append_inputs(m, corpus_files(a.corpus));
  append_inputs(m, bank_files(a.bank));
  m.outputs = {"metrics.jsonl", "final/ckpt.json", "final/ckpt.f32"};

  const int report_every = std::max(1, a.iters / 10);
  MetricsHook hook = [&](const IterationStats& st) {
    if (st.iter % report_every != 0 && st.iter != a.iters - 1) return;
    std::printf("iter %d/%d  loss %.4f (hvc %.4f, ha %.4f)  lr %.6f\n", st.iter, a.iters, st.total,
                st.contrastive, st.alignment, st.lr);
    std::fflush(stdout);
  };

  TrainResult result;
  if (!a.resume.empty()) {
    verify_manifest_inputs(a.out, m);
    m.write(a.out, false);
    result = resume_train(a.resume, corpus, bank, cfg, hook);
  } else {
    m.write(a.out, false);
    result = train(corpus, bank, cfg, hook);
  }
  m.write(a.out, true);

  std::cout << "trained " << result.iterations << " iterations; checkpoint at "
            << (fs::path(a.out) / "final").string() << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, train_dir, test_dir, out = "eval";
  int k = 10;
  int per_slide_cap = 0;
  uint64_t cap_seed = 0;
  bool scores = false;
};

int cmd_eval(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  Corpus train_corpus = load_corpus(a.train_dir);
  Corpus test_corpus = load_corpus(a.test_dir);

  Manifest m;
  m.command = "eval";
  m.seed = a.cap_seed;
  m.config = {{"k", a.k},
              {"per_slide_cap", a.per_slide_cap},
              {"ckpt", a.ckpt},
              {"train", a.train_dir},
              {"test", a.test_dir},
              {"scores", a.scores}};
  append_inputs(m, ckpt_files(a.ckpt));
  append_inputs(m, corpus_files(a.train_dir));
  append_inputs(m, corpus_files(a.test_dir));
  m.outputs = {"report.json"};
  m.write(a.out, false);

  EvalOptions opt;
  opt.k = a.k;
  opt.per_slide_cap = a.per_slide_cap;
  opt.cap_seed = a.cap_seed;
  KnnReport report = evaluate(ck.state, train_corpus, test_corpus, opt);
  save_report_json(report, fs::path(a.out) / "report.json", a.scores);
  m.write(a.out, true);

  std::printf("patch ACC %.4f  slide ACC %.4f  patient ACC %.4f  (k=%d, %s)\n", report.patch.acc,
              report.slide.acc, report.patient.acc, report.k, report.metric.c_str());
  return 0;
}

// ---- gradcheck ---------------------------------------------------------------------

int cmd_gradcheck(uint64_t seed) {
  GradAuditReport report = run_gradient_audit(seed);
  std::cout << format_audit(report);
  return report.pass ? 0 : 1;
}

// ---- make-markers --------------------------------------------------------------------

struct MakeMarkersArgs {
  std::string ckpt, corpus, out = "markers";
  int per_class = 8;
  double jitter = 0.05;
  uint64_t seed = 1;
};

int cmd_make_markers(const MakeMarkersArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  Corpus corpus = load_corpus(a.corpus);

  Manifest m;
  m.command = "make-markers";
  m.seed = a.seed;
  m.config = {{"per_class", a.per_class},
              {"jitter", a.jitter},
              {"ckpt", a.ckpt},
              {"corpus", a.corpus}};
  append_inputs(m, ckpt_files(a.ckpt));
  append_inputs(m, corpus_files(a.corpus));
  m.outputs = {"marker_bank.json"};
  m.write(a.out, false);

  MarkerBank bank = build_marker_bank(ck.state, corpus, a.per_class, a.jitter, a.seed);
  save_marker_bank(bank, fs::path(a.out) / "marker_bank.json");
  m.write(a.out, true);

  std::cout << "wrote " << bank.class_names.size() << " classes x " << a.per_class
            << " markers to " << (fs::path(a.out) / "marker_bank.json").string() << "\n";
  return 0;
}

// ---- inspect ----------------------------------------------------------------------

struct InspectArgs {
  std::string ckpt, corpus, patch_id;
  std::string bank;     // optional: print per-level characteristic selections
  std::string markers;  // optional: marker bank for the similarity table
  std::string out;      // optional: write markers.json report here
};

int cmd_inspect(const InspectArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  Corpus corpus = load_corpus(a.corpus);

  int patch_idx = -1;
  for (int i = 0; i < int(corpus.patches.size()); ++i)
    if (corpus.patches[size_t(i)].id == a.patch_id) {
      patch_idx = i;
      break;
    }
  if (patch_idx < 0) fail("cli", "patch id " + a.patch_id + " not found in " + a.corpus);

  const PatchRecord& patch = corpus.patches[size_t(patch_idx)];
  const SlideRecord& slide = corpus.slides[size_t(patch.slide)];
  const PatientRecord& patient = corpus.patients[size_t(slide.patient)];
  const int label = patient.label;

  std::cout << "patch " << patch.id << "  slide " << slide.id << "  patient " << patient.id
            << "  class " << label << "\n";

  Vec view(patch.pixels.begin(), patch.pixels.end());
  Vec z = encode(ck.state, view);
  std::cout << "embedding norm " << norm2(z) << " (dim " << z.size() << ")\n";

  if (!a.bank.empty()) {
    TextBank bank = load_bank(a.bank, /*allow_any_count=*/true);
    std::cout << "selected characteristics (argmax cosine per level):\n";
    for (Level lv : kLevels) {
      CamSelection sel = cam_select(bank, lv, z);
      const CharacteristicEntry& e = bank.entries[size_t(lv)][size_t(sel.index)];
      std::printf("  %-8s %-28s cos %.4f\n", level_name(lv), e.name.c_str(), sel.cosine);
    }
  }

  if (!a.markers.empty()) {
    MarkerBank mb = load_marker_bank(a.markers);
    MarkerSimReport rep = marker_similarity_report(ck.state, patch, label, mb);
    std::cout << "marker similarity (GT class " << label << "):\n";
    for (int c = 0; c < int(rep.sims.size()); ++c) {
      std::printf("  %-10s mean cos %.4f%s\n", mb.class_names[size_t(c)].c_str(),
                  rep.class_mean[size_t(c)], c == label ? "   <- GT" : "");
      for (const auto& [name, cosine] : rep.sims[size_t(c)])
        std::printf("    %-24s %.4f\n", name.c_str(), cosine);
    }
    if (!a.out.empty()) {
      fs::create_directories(a.out);
      save_marker_report(rep, fs::path(a.out) / "markers.json");
      std::cout << "wrote " << (fs::path(a.out) / "markers.json").string() << "\n";
    }
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
#ifdef _OPENMP
  if (const char* env = std::getenv("HIERSSL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif

  CLI::App app{std::string(kToolName) +
               " — hierarchical contrastive pretraining with language-tied projection spaces"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);

  GenDataArgs gd;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic hierarchical corpus");
  gen->add_option("--patients", gd.patients, "number of patients")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--slides", gd.slides, "slides per patient")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--patches", gd.patches, "patches per slide")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--classes", gd.classes, "number of classes")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--hw", gd.hw, "patch height and width")
      ->capture_default_str()
      ->check(CLI::Range(4, 4096));
  gen->add_option("--channels", gd.channels, "patch channels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gd.seed, "generator seed")->capture_default_str();
  gen->add_option("--test-frac", gd.test_frac, "also write train/ and test/ patient splits")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.9));
  gen->add_option("--out", gd.out, "output directory")->capture_default_str();

  std::string prompts_dataset, prompts_out = "prompts";
  CLI::App* prompts =
      app.add_subcommand("prompts", "emit the two-stage description prompt templates");
  prompts->add_option("--dataset", prompts_dataset, "dataset name to splice into the prompts")
      ->required();
  prompts->add_option("--out", prompts_out, "output directory")->capture_default_str();

  GenBankArgs gb;
  CLI::App* genbank =
      app.add_subcommand("gen-bank", "build a synthetic characteristic/description bank");
  genbank->add_option("--dim", gb.dim, "embedding dimension")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  genbank->add_option("--chars", gb.chars, "characteristics per level")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  genbank->add_option("--seed", gb.seed, "embedding seed")->capture_default_str();
  genbank->add_option("--dataset", gb.dataset, "dataset tag in the generated text")
      ->capture_default_str();
  genbank->add_option("--out", gb.out, "output directory")->capture_default_str();

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "pretrain the encoder on a corpus");
  train->set_config("--config", "", "INI file; keys are long option names, command line wins");
  train->add_option("--corpus", tr.corpus, "corpus directory")->required();
  train->add_option("--bank", tr.bank, "bank directory")->required();
  train->add_option("--out", tr.out, "run output directory")->capture_default_str();
  train->add_option("--iters", tr.iters, "total training iterations")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--lr", tr.lr, "peak learning rate")->capture_default_str();
  train->add_option("--tau", tr.tau, "contrastive temperature")->capture_default_str();
  train->add_option("--tau-kl", tr.tau_kl, "alignment softmax temperature")
      ->capture_default_str();
  train->add_option("--warmup-frac", tr.warmup_frac, "fraction of iters spent in warmup")
      ->capture_default_str();
  train->add_option("--weight-decay", tr.weight_decay, "decoupled weight decay")
      ->capture_default_str();
  train->add_option("--patients-per-batch", tr.patients_per_batch, "patients per batch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--ns", tr.ns, "slides per patient per batch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--np", tr.np, "patches per slide per batch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--na", tr.na, "augmented views per patch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--seed", tr.seed, "training seed")->capture_default_str();
  train->add_option("--ckpt-every", tr.ckpt_every, "periodic checkpoint interval (0 = none)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_flag("--no-ha", tr.no_ha, "disable the text alignment loss (contrastive only)");
  train->add_flag("--allow-nonstandard-bank", tr.allow_nonstandard_bank,
                  "accept banks without the standard 128 characteristics per level");
  train->add_option("--aug-noise", tr.aug_noise, "augmentation noise stddev")
      ->capture_default_str();
  train->add_option("--flip-prob", tr.flip_prob, "horizontal flip probability")
      ->capture_default_str();
  train->add_option("--aug-shift", tr.aug_shift, "max augmentation shift in pixels")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train->add_option("--embed-dim", tr.embed_dim, "embedding dimension D")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--conv1", tr.conv1, "first conv stage channels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--conv2", tr.conv2, "second conv stage channels")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train->add_option("--resume", tr.resume, "checkpoint directory to continue from");

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "kNN evaluation of a frozen checkpoint");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint directory")->required();
  eval->add_option("--train", ev.train_dir, "train-split corpus directory")->required();
  eval->add_option("--test", ev.test_dir, "test-split corpus directory")->required();
  eval->add_option("--k", ev.k, "number of neighbors")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval->add_option("--per-slide-cap", ev.per_slide_cap,
                   "max train patches per slide in the reference bank (0 = all)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--cap-seed", ev.cap_seed, "seed for per-slide subsampling")
      ->capture_default_str();
  eval->add_flag("--scores", ev.scores, "include per-sample score vectors in report.json");
  eval->add_option("--out", ev.out, "output directory")->capture_default_str();

  uint64_t gc_seed = 1;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference audit of every gradient path");
  gradcheck->add_option("--seed", gc_seed, "audit seed")->capture_default_str();

  MakeMarkersArgs mk;
  CLI::App* markers =
      app.add_subcommand("make-markers", "synthesize per-class marker embeddings from a model");
  markers->add_option("--ckpt", mk.ckpt, "checkpoint directory")->required();
  markers->add_option("--corpus", mk.corpus, "corpus directory")->required();
  markers->add_option("--per-class", mk.per_class, "markers per class")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  markers->add_option("--jitter", mk.jitter, "stddev of marker jitter around the centroid")
      ->capture_default_str();
  markers->add_option("--seed", mk.seed, "marker jitter seed")->capture_default_str();
  markers->add_option("--out", mk.out, "output directory")->capture_default_str();

  InspectArgs ins;
  CLI::App* inspect =
      app.add_subcommand("inspect", "per-patch characteristic selections and marker table");
  inspect->add_option("--ckpt", ins.ckpt, "checkpoint directory")->required();
  inspect->add_option("--corpus", ins.corpus, "corpus directory")->required();
  inspect->add_option("--patch-id", ins.patch_id, "patch id to inspect")->required();
  inspect->add_option("--bank", ins.bank, "bank directory for characteristic selections");
  inspect->add_option("--markers", ins.markers, "marker bank JSON for the similarity table");
  inspect->add_option("--out", ins.out, "directory for markers.json report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gd);
    if (prompts->parsed()) return cmd_prompts(prompts_dataset, prompts_out);
    if (genbank->parsed()) return cmd_gen_bank(gb);
    if (train->parsed()) return cmd_train(tr);
    if (eval->parsed()) return cmd_eval(ev);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
    if (markers->parsed()) return cmd_make_markers(mk);
    if (inspect->parsed()) return cmd_inspect(ins);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand selected\n";
  return 1;
}

}  // namespace hierssl
