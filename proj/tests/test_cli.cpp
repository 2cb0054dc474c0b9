#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <limits>
#include <string>

#include "differ/pipeline.hpp"
#include "doctest.h"

using namespace differ;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DIFFER_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

const char* kTinyConfig =
    R"({"model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "max_len": 32},
        "train": {"epochs": 1, "batch_size": 8},
        "sft": {"epochs": 1, "batch_size": 8}})";

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen-data --out /tmp/x --bogus") == 1);
  CHECK(run("gen-data") == 1);
  CHECK(run("sft --ckpt a --data b --out c --train-template sideways") == 1);
  CHECK(run("--help") == 0);
  CHECK(run("--version") == 0);
}

TEST_CASE("data and numeric failures map to 2 and 3") {
  TempDir tmp("differ_cli_codes");
  REQUIRE(run("gen-data --out " + (tmp / "data") + " --n-facts 12 --n-sym 4 --n-rel 4") == 0);
  // refusing to overwrite a non-empty directory is a usage problem
  CHECK(run("gen-data --out " + (tmp / "data") + " --n-facts 12 --n-sym 4 --n-rel 4") == 1);
  CHECK(run("pretrain --data " + (tmp / "missing") + " --out " + (tmp / "p.dfer")) == 2);
  CHECK(run("eval --ckpt-dir " + tmp.path.string() + " --data " + (tmp / "data") + " --report " +
            (tmp / "r")) == 2);

  write_file(tmp / "bad.json", R"({"train": {"learning_rate": -1}})");
  CHECK(run("pretrain --data " + (tmp / "data") + " --config " + (tmp / "bad.json") + " --out " +
            (tmp / "p.dfer")) == 1);
  write_file(tmp / "typo.json", R"({"trian": {}})");
  CHECK(run("pretrain --data " + (tmp / "data") + " --config " + (tmp / "typo.json") + " --out " +
            (tmp / "p.dfer")) == 1);

  // A checkpoint holding a NaN makes the first SFT loss non-finite.
  write_file(tmp / "tiny.json", kTinyConfig);
  REQUIRE(run("pretrain --data " + (tmp / "data") + " --config " + (tmp / "tiny.json") +
              " --out " + (tmp / "p.dfer")) == 0);
  auto loaded = load_checkpoint(tmp / "p.dfer");
  loaded.model.param("lnf.g")[0] = std::numeric_limits<float>::quiet_NaN();
  save_checkpoint(loaded.model, loaded.vocab_hash, tmp / "nan.dfer");
  CHECK(run("sft --ckpt " + (tmp / "nan.dfer") + " --data " + (tmp / "data") + " --config " +
            (tmp / "tiny.json") + " --out " + (tmp / "s.dfer")) == 3);
  CHECK_FALSE(fs::exists(tmp / "s.dfer"));
  const auto manifest = nlohmann::json::parse(read_file(tmp / "s.manifest.json"));
  CHECK(manifest.at("status") == "diverged");

  // checkpoint from another vocabulary
  REQUIRE(run("gen-data --out " + (tmp / "other") + " --n-facts 12 --n-sym 4 --n-rel 4 --seed 5") == 0);
  CHECK(run("sft --ckpt " + (tmp / "p.dfer") + " --data " + (tmp / "other") + " --config " +
            (tmp / "tiny.json") + " --out " + (tmp / "s2.dfer")) == 2);
}

TEST_CASE("identical invocations produce identical artifacts") {
  TempDir tmp("differ_cli_determinism");
  write_file(tmp / "tiny.json", kTinyConfig);
  for (const char* run_dir : {"a", "b"}) {
    const std::string d = tmp / run_dir;
    REQUIRE(run("gen-data --out " + d + "/data --n-facts 16 --n-sym 4 --n-rel 4 --seed 3") == 0);
    REQUIRE(run("pretrain --data " + d + "/data --config " + (tmp / "tiny.json") +
                " --mask-mode whole-entity --seed 3 --out " + d + "/ck/pre.dfer") == 0);
    REQUIRE(run("sft --ckpt " + d + "/ck/pre.dfer --data " + d + "/data --config " +
                (tmp / "tiny.json") + " --use-sym true --use-rel true --seed 3 --out " + d +
                "/ck/sft_forward.dfer") == 0);
    REQUIRE(run("eval --ckpt-dir " + d + "/ck --data " + d + "/data --config " +
                (tmp / "tiny.json") + " --rows forward --report " + d + "/report") == 0);
    REQUIRE(run("error-analysis --cases " + d + "/report/cases.jsonl --out " + d +
                "/errors.csv") == 0);
  }
  for (const char* f : {"data/facts.jsonl", "data/sym.jsonl", "data/rel.jsonl", "data/vocab.txt",
                        "ck/pre.dfer", "ck/pre.steps.csv", "ck/sft_forward.dfer",
                        "ck/sft_forward.audit.csv", "report/matrix.csv", "report/cases.jsonl",
                        "errors.csv"}) {
    CAPTURE(f);
    CHECK(sha256_file(tmp / (std::string("a/") + f)) == sha256_file(tmp / (std::string("b/") + f)));
  }
  for (const char* f : {"data/manifest.json", "ck/pre.manifest.json", "ck/sft_forward.manifest.json",
                        "report/manifest.json"}) {
    CAPTURE(f);
    CHECK(manifest_fingerprint(tmp / (std::string("a/") + f)) ==
          manifest_fingerprint(tmp / (std::string("b/") + f)));
  }
  const auto m = nlohmann::json::parse(read_file(tmp / "a/ck/pre.manifest.json"));
  CHECK(m.contains("wall_clock_seconds"));
  CHECK(m.at("status") == "ok");
}

TEST_CASE("nested manifests do not leak wall-clock time into the parent") {
  TempDir tmp("differ_test_cli_nested");
  std::string fps[2];
  for (int i = 0; i < 2; ++i) {
    Manifest child("child", tmp.path.string());
    child.set_wall_clock(1.0 + i);
    child.save(tmp / "child.manifest.json");
    Manifest parent("parent", tmp.path.string());
    parent.add_output(tmp / "child.manifest.json");
    parent.set_wall_clock(10.0 + i);
    parent.save(tmp / "manifest.json");
    fps[i] = manifest_fingerprint(tmp / "manifest.json");
  }
  CHECK(fps[0] == fps[1]);
}
