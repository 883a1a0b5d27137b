#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "fhvae/trainer.hpp"

using namespace fhvae;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  SynthCorpus synth;
  TrainCorpus corpus;
  ModelConfig mc;
  TrainingConfig tc;

  explicit Fixture(double dys_fraction = 0.5) {
    SynthConfig s;
    s.n_sequences = 12;
    s.n_speakers = 6;
    s.obs_dim = 4;
    s.frames_per_segment = 6;
    s.segments_per_sequence = 3;
    s.dysarthric_fraction = dys_fraction;
    s.domain_shift_strength = 1.0;
    s.seed = 21;
    synth = synth_generate(s);
    std::vector<FeatureMatrix> feats;
    for (const auto& e : synth.manifest.entries) feats.push_back(*e.features);
    mc.feat_dim = 4;
    mc.seg_len = 6;
    mc.hidden = 4;
    mc.layers = 1;
    mc.z1_dim = 2;
    mc.z2_dim = 2;
    mc.disc_hidden = 4;
    corpus = build_train_corpus(synth.manifest, feats, mc.seg_len, 3);
    tc.batch_size = 8;
    tc.hier_sample_size = 8;
    tc.max_epochs = 3;
    tc.patience = 2;
    tc.seed = 4;
    tc.validation_fraction = 0.2;
  }
};

TrainingConfig all_flags(TrainingConfig tc) {
  tc.flags.adversarial = tc.flags.reference = tc.flags.gen_dys_only = tc.flags.disentangle = true;
  return tc;
}

std::uint64_t model_hash(Fhvae& m) { return parameter_hash(m.parameters()); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fhvae_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sequence means follow the shrinkage rule") {
  Fixture f;
  Fhvae model(f.mc, PriorConfig{}, 3);
  const std::vector<int> seqs{0, 5, 7};
  const Mat got = compute_seq_means(model, f.corpus, seqs);
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    const auto& segs = f.corpus.sequences[seqs[k]].segments;
    Vec sum = Vec::Zero(f.mc.z2_dim);
    for (const auto& s : segs) sum += model.encode_z2(s).mean;
    const Vec want = sum / (static_cast<double>(segs.size()) + 0.25 / 1.0);
    CHECK((got.row(static_cast<Eigen::Index>(k)).transpose() - want).norm() < 1e-10);
  }
}

TEST_CASE("hierarchical sampler visits every segment once per pass") {
  Fixture f;
  Fhvae model(f.mc, PriorConfig{}, 3);
  std::vector<int> pool{0, 1, 2, 3, 4, 5, 6, 7, 8};
  HierarchicalSampler sampler(f.corpus, pool, 4, 5, 99);
  std::set<std::pair<int, int>> seen;
  std::size_t total = 0;
  int caches = 0;
  while (sampler.next_cache(model)) {
    ++caches;
    const auto& cache = sampler.cache();
    CHECK(cache.size() <= 4);
    CHECK(cache.mu2.rows() == static_cast<Eigen::Index>(cache.size()));
    for (const auto& b : sampler.batches()) {
      CHECK(b.size() <= 5);
      for (const auto& item : b) {
        seen.insert({cache.sequences[item.slot], item.segment});
        ++total;
      }
    }
  }
  CHECK(caches == 3);
  std::size_t want = 0;
  for (int s : pool) want += f.corpus.sequences[s].segments.size();
  CHECK(total == want);
  CHECK(seen.size() == want);
}

TEST_CASE("adam first step moves each weight by the learning rate") {
  ad::Parameter p("w", Mat::Constant(1, 3, 1.0));
  p.grad << 2.0, -0.5, 0.0;
  Adam opt(0.1);
  opt.step({&p});
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)));
  CHECK(p.value(0, 1) == doctest::Approx(1.1));
  CHECK(p.value(0, 2) == 1.0);
  CHECK(opt.state().step == 1);
}

TEST_CASE("validation split size and determinism") {
  Fixture f;
  const auto a = validation_split(f.corpus, 0.2, 1), b = validation_split(f.corpus, 0.2, 1);
  CHECK(a == b);
  CHECK(a.size() == 2);  // round(0.2 * 12)
  CHECK(validation_split(f.corpus, 0.0, 1).empty());
  CHECK(validation_split(f.corpus, 0.99, 1).size() == f.corpus.sequences.size() - 1);
}

TEST_CASE("pretraining lowers the objective and is reproducible") {
  Fixture f(0.0);
  set_warnings_quiet(true);
  TrainingConfig tc = f.tc;
  tc.max_epochs = 4;
  tc.patience = 4;
  tc.lr_fhvae = 0.01;
  std::ostringstream m1, m2;
  TrainHooks h1, h2;
  h1.metrics = &m1;
  h2.metrics = &m2;
  TrainResult a = pretrain(f.corpus, f.mc, PriorConfig{}, tc, h1);
  TrainResult b = pretrain(f.corpus, f.mc, PriorConfig{}, tc, h2);
  set_warnings_quiet(false);
  CHECK(m1.str() == m2.str());
  CHECK(model_hash(a.ckpt.model) == model_hash(b.ckpt.model));
  REQUIRE(a.history.size() == 4);
  CHECK(a.history.back().val_total < a.history.front().val_total);
  CHECK(m1.str().find("step=1 epoch=1 lb=") == 0);
}

TEST_CASE("stage preconditions") {
  Fixture dys(1.0), ctrl(0.0);
  set_warnings_quiet(true);
  CHECK_THROWS_AS(pretrain(dys.corpus, dys.mc, PriorConfig{}, dys.tc), ContractError);
  TrainResult pre = pretrain(ctrl.corpus, ctrl.mc, PriorConfig{}, ctrl.tc);
  CHECK_THROWS_AS(finetune(pre.ckpt, ctrl.corpus, all_flags(ctrl.tc)), ConfigError);
  TrainingConfig bad = ctrl.tc;
  bad.hier_sample_size = 2;
  CHECK_THROWS_AS(finetune(pre.ckpt, ctrl.corpus, bad), ConfigError);
  set_warnings_quiet(false);
}

TEST_CASE("finetuning with every extension keeps updates isolated") {
  Fixture f;
  set_warnings_quiet(true);
  TrainResult pre = pretrain(f.corpus, f.mc, PriorConfig{}, f.tc);
  TrainingConfig tc = all_flags(f.tc);
  tc.check_isolation = true;
  tc.n_disc_steps = 2;
  const std::uint64_t before = model_hash(pre.ckpt.model);
  TrainResult ft = finetune(pre.ckpt, f.corpus, tc);
  set_warnings_quiet(false);
  CHECK(ft.ckpt.stage == Stage::kFinetune);
  REQUIRE(ft.ckpt.disc.has_value());
  REQUIRE(ft.ckpt.reference.has_value());
  CHECK(model_hash(*ft.ckpt.reference) == before);
  CHECK(model_hash(ft.ckpt.model) != before);
  // Adversarial finetunes run every epoch (no early stopping).
  CHECK(ft.ckpt.epoch == tc.max_epochs);
  CHECK(ft.ckpt.adam_disc.step == 2 * ft.ckpt.global_step);
}

TEST_CASE("checkpoints round trip and resume matches an uninterrupted run") {
  Fixture f;
  set_warnings_quiet(true);
  TrainResult pre = pretrain(f.corpus, f.mc, PriorConfig{}, f.tc);
  const TrainingConfig tc = all_flags(f.tc);

  std::ostringstream full_log;
  TrainHooks full;
  full.metrics = &full_log;
  TrainResult straight = finetune(pre.ckpt, f.corpus, tc, full);

  const fs::path dir = scratch("resume");
  std::ostringstream part1, part2;
  TrainHooks h1;
  h1.metrics = &part1;
  h1.checkpoint_dir = dir;
  h1.stop_after_epochs = 1;
  finetune(pre.ckpt, f.corpus, tc, h1);
  Checkpoint latest = load_checkpoint(dir / "latest.ckpt");
  CHECK(latest.epoch == 1);
  TrainHooks h2;
  h2.metrics = &part2;
  TrainResult resumed = resume(latest, f.corpus, h2);
  set_warnings_quiet(false);

  CHECK(part1.str() + part2.str() == full_log.str());
  CHECK(model_hash(resumed.ckpt.model) == model_hash(straight.ckpt.model));
  CHECK(parameter_hash(resumed.ckpt.disc->parameters()) == parameter_hash(straight.ckpt.disc->parameters()));

  save_checkpoint(straight.ckpt, dir / "x.ckpt");
  Checkpoint back = load_checkpoint(dir / "x.ckpt");
  CHECK(model_hash(back.model) == model_hash(straight.ckpt.model));
  CHECK(back.global_step == straight.ckpt.global_step);
  CHECK(back.train.flags.disentangle);
  CHECK(back.adam_fhvae.m.size() == straight.ckpt.adam_fhvae.m.size());
  CHECK(back.adam_fhvae.step == straight.ckpt.adam_fhvae.step);
}

TEST_CASE("early stopping restores the best parameters") {
  Fixture f(0.0);
  set_warnings_quiet(true);
  TrainingConfig tc = f.tc;
  tc.lr_fhvae = 0.5;  // unstable on purpose so validation gets worse
  tc.max_epochs = 12;
  tc.patience = 1;
  TrainResult r = pretrain(f.corpus, f.mc, PriorConfig{}, tc);
  set_warnings_quiet(false);
  CHECK(r.ckpt.finished);
  if (r.ckpt.epoch < tc.max_epochs) {
    CHECK(r.ckpt.bad_epochs >= 1);
    Checkpoint probe = r.ckpt;
    const auto val = validation_split(f.corpus, tc.validation_fraction, tc.seed);
    CHECK(validation_loss(probe, f.corpus, val) == doctest::Approx(r.ckpt.best_val).epsilon(1e-9));
  }
}

TEST_CASE("non-finite losses stop training with a dump") {
  Fixture f(0.0);
  f.corpus.sequences[0].segments[0](0, 0) = std::nan("");
  TrainingConfig tc = f.tc;
  tc.validation_fraction = 0.0;
  const fs::path dir = scratch("nan");
  TrainHooks h;
  h.dump_dir = dir;
  CHECK_THROWS_AS(pretrain(f.corpus, f.mc, PriorConfig{}, tc, h), NumericalError);
  CHECK(fs::exists(dir / "nonfinite_batch.fhvf"));
  CHECK(fs::exists(dir / "nonfinite_batch.txt"));
}
