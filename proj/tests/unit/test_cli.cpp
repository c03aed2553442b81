#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hierssl/binio.hpp"
#include "hierssl/cli.hpp"
#include "hierssl/corpus.hpp"
#include "hierssl/textbank.hpp"

using namespace hierssl;
namespace fs = std::filesystem;

namespace {
int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("hierssl");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(int(argv.size()), argv.data());
}

struct TempDir {
  fs::path p;
  explicit TempDir(const char* name) : p(fs::temp_directory_path() / name) {
    fs::remove_all(p);
    fs::create_directories(p);
  }
  ~TempDir() { fs::remove_all(p); }
  std::string s(const char* rel) const { return (p / rel).string(); }
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}
}  // namespace

TEST_CASE("gen-data is rerun-identical, including the manifest") {
  TempDir tmp("hierssl-cli-gendata");
  std::vector<std::string> base{"gen-data", "--patients", "4", "--slides", "2", "--patches", "2",
                                "--hw", "8", "--channels", "1", "--seed", "3"};
  std::vector<std::string> a = base;
  a.insert(a.end(), {"--out", tmp.s("a")});
  std::vector<std::string> b = base;
  b.insert(b.end(), {"--out", tmp.s("b")});
  REQUIRE(run(a) == 0);
  REQUIRE(run(b) == 0);
  for (const char* f : {"corpus.json", "patches.f32", "manifest.json"})
    CHECK(file_hash_hex(tmp.p / "a" / f, "test") == file_hash_hex(tmp.p / "b" / f, "test"));
  Corpus c = load_corpus(tmp.p / "a");
  c.validate();
  CHECK(c.patients.size() == 4);
}

TEST_CASE("gen-data with a test fraction writes a stratified train/test pair") {
  TempDir tmp("hierssl-cli-split");
  REQUIRE(run({"gen-data", "--patients", "6", "--slides", "2", "--patches", "2", "--hw", "8",
               "--channels", "1", "--seed", "3", "--test-frac", "0.34",
               "--out", tmp.s("c")}) == 0);
  Corpus train = load_corpus(tmp.p / "c" / "train");
  Corpus test = load_corpus(tmp.p / "c" / "test");
  train.validate();
  test.validate();
  CHECK(train.patients.size() + test.patients.size() == 6);
  CHECK(!test.patients.empty());
  for (const PatientRecord& tp : test.patients)
    for (const PatientRecord& rp : train.patients) CHECK(tp.id != rp.id);
}

TEST_CASE("bad usage returns a nonzero exit without touching files") {
  TempDir tmp("hierssl-cli-bad");
  CHECK(run({"gen-data", "--patients", "0", "--out", tmp.s("x")}) != 0);
  CHECK(run({"gen-data", "--no-such-flag", "--out", tmp.s("y")}) != 0);
  CHECK(run({"no-such-command"}) != 0);
  CHECK(!fs::exists(tmp.p / "x"));
  CHECK(!fs::exists(tmp.p / "y"));
  CHECK(run({"--version"}) == 0);
}

TEST_CASE("prompts emits two-stage templates per level") {
  TempDir tmp("hierssl-cli-prompts");
  REQUIRE(run({"prompts", "--dataset", "lung tissue", "--out", tmp.s("p")}) == 0);
  for (const char* f : {"patient.txt", "slide.txt", "patch.txt"}) {
    std::string text = slurp(tmp.p / "p" / f);
    CHECK(text.find("lung tissue") != std::string::npos);
    CHECK(text.find("exactly 4") != std::string::npos);
    CHECK(text.find("Stage 1") != std::string::npos);
    CHECK(text.find("Stage 2") != std::string::npos);
  }
}

TEST_CASE("train-eval round trip through the command line") {
  TempDir tmp("hierssl-cli-train");
  REQUIRE(run({"gen-data", "--patients", "6", "--slides", "2", "--patches", "2", "--hw", "8",
               "--channels", "1", "--seed", "3", "--test-frac", "0.34",
               "--out", tmp.s("c")}) == 0);
  REQUIRE(run({"gen-bank", "--dim", "16", "--seed", "5", "--out", tmp.s("bank")}) == 0);
  REQUIRE(run({"train", "--corpus", tmp.s("c") + "/train", "--bank", tmp.s("bank"), "--iters",
               "3", "--patients-per-batch", "2", "--embed-dim", "16", "--conv1", "2", "--conv2",
               "3", "--ckpt-every", "0", "--out", tmp.s("run")}) == 0);
  CHECK(fs::exists(tmp.p / "run" / "final" / "ckpt.f32"));
  CHECK(fs::exists(tmp.p / "run" / "metrics.jsonl"));
  CHECK(fs::exists(tmp.p / "run" / "manifest.json"));
  REQUIRE(run({"eval", "--ckpt", tmp.s("run") + "/final", "--train", tmp.s("c") + "/train",
               "--test", tmp.s("c") + "/test", "--k", "3", "--out", tmp.s("ev")}) == 0);
  CHECK(fs::exists(tmp.p / "ev" / "report.json"));
  // metrics lines carry the advertised keys
  std::string metrics = slurp(tmp.p / "run" / "metrics.jsonl");
  for (const char* key : {"\"iter\"", "\"lr\"", "\"loss_total\"", "\"loss_hvc\"", "\"loss_patch\"",
                          "\"loss_slide\"", "\"loss_patient\"", "\"loss_ha\"", "\"wall_ms\""})
    CHECK(metrics.find(key) != std::string::npos);
}

TEST_CASE("a corrupted bank blob fails loudly") {
  TempDir tmp("hierssl-cli-corrupt");
  REQUIRE(run({"gen-bank", "--dim", "16", "--seed", "5", "--out", tmp.s("bank")}) == 0);
  REQUIRE(fs::exists(tmp.p / "bank" / "bank.f32"));
  {
    std::ofstream f(tmp.p / "bank" / "bank.f32", std::ios::app | std::ios::binary);
    f << "extra";
  }
  REQUIRE(run({"gen-data", "--patients", "4", "--slides", "2", "--patches", "2", "--hw", "8",
               "--channels", "1", "--seed", "3", "--out", tmp.s("c")}) == 0);
  CHECK(run({"train", "--corpus", tmp.s("c"), "--bank", tmp.s("bank"), "--iters", "2",
             "--patients-per-batch", "2", "--embed-dim", "16", "--conv1", "2", "--conv2", "3",
             "--out", tmp.s("run")}) != 0);
}

TEST_CASE("gradcheck subcommand reports success") {
  CHECK(run({"gradcheck", "--seed", "2"}) == 0);
}
