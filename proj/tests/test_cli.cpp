#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fhvae/cli.hpp"
#include "fhvae/common.hpp"

using namespace fhvae;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream o, e;
  Run r;
  r.code = run_cli(args, o, e);
  r.out = o.str();
  r.err = e.str();
  return r;
}

std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fhvae_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::vector<std::string> kTinySynth{"--set", "synth.n_sequences=16",        "--set", "synth.n_speakers=8",
                                          "--set", "synth.obs_dim=5",            "--set", "synth.frames_per_segment=6",
                                          "--set", "synth.segments_per_sequence=3", "--set", "synth.n_labels=3"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  const Run a = cli({"pretrain", "--bogus"});
  CHECK(a.code == kExitUsage);
  CHECK(a.err.find("error: UsageError") == 0);
  CHECK(cli({"pretrain"}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
  const Run h = cli({"finetune", "--help"});
  CHECK(h.code == kExitOk);
  CHECK(h.out.find("--flags") != std::string::npos);
}

TEST_CASE("synth is deterministic and snapshots its settings") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  const Run r1 = cli(with({"synth", "--seed", "7", "--out-dir", a.string()}, kTinySynth));
  const Run r2 = cli(with({"synth", "--seed", "7", "--out-dir", b.string()}, kTinySynth));
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  CHECK(value_of(r1.out, "digest") == value_of(r2.out, "digest"));
  CHECK(value_of(r1.out, "digest").size() == 16);
  CHECK(fs::exists(a / "config.resolved"));
  CHECK(fs::exists(a / "command.txt"));
  std::ifstream cfg(a / "config.resolved");
  std::stringstream text;
  text << cfg.rdbuf();
  CHECK(text.str().find("synth.seed = 7") != std::string::npos);
  const Run again = cli({"synth", "--out-dir", a.string()});
  CHECK(again.code == kExitFailure);
  CHECK(again.err.find("error: ConfigError") == 0);
}

TEST_CASE("configuration errors exit with code 1") {
  const Run r = cli({"synth", "--set", "synth.unknown=1", "--out-dir", scratch("bad").string()});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find("error: ConfigError") == 0);
  const Run f = cli({"synth", "--set", "synth.n_sequences=0", "--out-dir", scratch("bad2").string()});
  CHECK(f.code == kExitFailure);
}

TEST_CASE("output root from the environment") {
  const fs::path root = scratch("root");
  setenv(kOutputRootEnv, root.string().c_str(), 1);
  const Run a = cli(with({"synth"}, kTinySynth)), b = cli(with({"synth"}, kTinySynth));
  unsetenv(kOutputRootEnv);
  CHECK(a.code == 0);
  CHECK(fs::exists(root / "synth-001" / "corpus.manifest"));
  CHECK(fs::exists(root / "synth-002" / "corpus.manifest"));
}

TEST_CASE("end-to-end pretrain, finetune, extract and eval") {
  const fs::path base = scratch("e2e");
  set_warnings_quiet(true);
  const Run ctrl = cli(with({"synth", "--seed", "1", "--set", "synth.dysarthric_fraction=0", "--set",
                             "synth.speaker_prefix=c", "--out-dir", (base / "ctrl").string()},
                            kTinySynth));
  const Run mix = cli(with({"synth", "--seed", "2", "--set", "synth.dysarthric_fraction=0.5", "--set",
                            "synth.n_speakers=12", "--set", "synth.speaker_prefix=m", "--out-dir",
                            (base / "mix").string()},
                           kTinySynth));
  REQUIRE(ctrl.code == 0);
  REQUIRE(mix.code == 0);
  const std::vector<std::string> train{"--set", "model.seg_len=6",    "--set", "model.hidden=4",
                                       "--set", "model.z1_dim=2",     "--set", "model.z2_dim=2",
                                       "--set", "model.disc_hidden=4", "--set", "train.batch_size=8",
                                       "--set", "train.hier_sample_size=8", "--set", "train.max_epochs=2",
                                       "--set", "train.train_shift=3", "--set", "train.patience=1"};
  const Run pre = cli(with({"pretrain", "--manifest", value_of(ctrl.out, "manifest"), "--out-dir",
                            (base / "pre").string()},
                           train));
  INFO(pre.err);
  REQUIRE(pre.code == 0);
  CHECK(fs::exists(base / "pre" / "metrics.log"));
  CHECK(fs::exists(base / "pre" / "checkpoints" / "latest.ckpt"));
  const Run ft = cli(with({"finetune", "--ckpt", value_of(pre.out, "checkpoint"), "--manifest",
                           value_of(mix.out, "manifest"), "--flags", "adversarial,reference,gen_dys_only",
                           "--out-dir", (base / "ft").string()},
                          train));
  INFO(ft.err);
  REQUIRE(ft.code == 0);
  const Run ex = cli({"extract", "--ckpt", value_of(ft.out, "checkpoint"), "--manifest", value_of(mix.out, "manifest"),
                      "--which", "z1", "--shift", "3", "--out-dir", (base / "ex").string()});
  INFO(ex.err);
  REQUIRE(ex.code == 0);
  CHECK(!value_of(ex.out, "manifest").empty());
  const Run ev = cli({"eval", "--protocol", "kfold", "--input", "z12", "--ckpt", value_of(ft.out, "checkpoint"),
                      "--manifest", value_of(mix.out, "manifest"), "--folds", "3", "--repeats", "1", "--shift", "3",
                      "--out-dir", (base / "ev").string()});
  set_warnings_quiet(false);
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("finetuned+adversarial+reference+dys_only\tkfold\tz12\t") != std::string::npos);
  CHECK(fs::exists(base / "ev" / "report.tsv"));
  const Run bad = cli({"finetune", "--ckpt", value_of(pre.out, "checkpoint"), "--manifest",
                       value_of(mix.out, "manifest"), "--flags", "sideways", "--out-dir", (base / "bad").string()});
  CHECK(bad.code == kExitFailure);
}
