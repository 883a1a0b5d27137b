#include "fhvae/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "fhvae/checkpoint.hpp"
#include "fhvae/config.hpp"
#include "fhvae/evalharness.hpp"
#include "fhvae/extract.hpp"
#include "fhvae/pipeline.hpp"
#include "fhvae/trainer.hpp"

namespace fhvae {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int workers = 0;
  std::string command_line;
};

void add_common(CLI::App* app, CommonArgs& c) {
  app->add_option("--config", c.config, "Key-value configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Override a configuration key (key=value), repeatable");
  app->add_option("--seed", c.seed, "Root seed (sets train.seed and synth.seed)");
  app->add_option("--out-dir", c.out_dir,
                  std::string("Run directory (default: a fresh directory under $") + kOutputRootEnv + ")");
  app->add_option("--workers", c.workers, "Feature-loading threads")->check(CLI::PositiveNumber);
}

/// Settings resolved from defaults, config file, overrides and flags.
struct Resolved {
  RunSettings settings;
  KeyValues explicit_keys;
};

Resolved resolve(const CommonArgs& c) {
  Resolved r;
  if (!c.config.empty()) r.explicit_keys = read_config_file(c.config);
  for (const auto& [k, v] : parse_overrides(c.overrides)) r.explicit_keys[k] = v;
  r.settings.apply(r.explicit_keys);
  if (c.seed) {
    r.settings.train.seed = *c.seed;
    r.settings.synth.seed = *c.seed;
  }
  if (c.workers > 0) r.settings.workers = c.workers;
  return r;
}

/// Claims a run directory: an explicit --out-dir must be absent or empty;
/// otherwise `<root>/<command>-NNN` is created with the first free number.
fs::path make_run_dir(const std::string& requested, const std::string& command) {
  std::error_code ec;
  if (!requested.empty()) {
    fs::path p(requested);
    if (fs::exists(p)) {
      if (!fs::is_directory(p) || !fs::is_empty(p))
        throw ConfigError("output directory " + p.string() + " exists and is not empty");
      return p;
    }
    if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
    if (!fs::create_directory(p, ec) || ec) throw IoError("cannot create output directory " + p.string());
    return p;
  }
  const char* env = std::getenv(kOutputRootEnv);
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create output root " + root.string());
  for (int n = 1; n < 100000; ++n) {
    char name[64];
    std::snprintf(name, sizeof name, "%s-%03d", command.c_str(), n);
    const fs::path p = root / name;
    if (fs::create_directory(p, ec)) return p;
    if (ec) throw IoError("cannot create run directory " + p.string() + ": " + ec.message());
  }
  throw IoError("no free run directory under " + root.string());
}

void snapshot(const fs::path& dir, const CommonArgs& c, const Resolved& r) {
  write_config_file(dir / "config.resolved", r.settings.to_kv());
  std::ofstream cmd(dir / "command.txt");
  if (!cmd) throw IoError("cannot write " + (dir / "command.txt").string());
  cmd << c.command_line << "\n";
}

struct LoadedCorpus {
  CorpusManifest manifest;
  std::vector<FeatureMatrix> features;  // aligned with manifest.entries
};

LoadedCorpus load_corpus(const fs::path& manifest_path, const RunSettings& s) {
  LoadedCorpus c;
  c.manifest = read_manifest(manifest_path);
  if (c.manifest.entries.empty()) throw EmptyInputError("manifest " + manifest_path.string() + " has no utterances");
  auto loaded = load_corpus_features(c.manifest, manifest_path.parent_path(), s.frontend, s.workers);
  std::map<std::string, FeatureMatrix> by_id;
  for (auto& [id, m] : loaded) by_id.emplace(id, std::move(m));
  for (const auto& e : c.manifest.entries) c.features.push_back(std::move(by_id.at(e.utterance_id)));
  return c;
}

void normalize_in_place(std::vector<FeatureMatrix>& feats, const NormStats& stats) {
  for (auto& f : feats) {
    if (f.cols() != stats.mean.size())
      throw ConfigError("feature dimension " + std::to_string(f.cols()) + " does not match the normalization stats (" +
                        std::to_string(stats.mean.size()) + ")");
    f = normalize(f, stats);
  }
}

NormStats stats_for(const Checkpoint& ck, const std::string& override_path) {
  if (!override_path.empty()) return load_norm_stats(override_path);
  if (ck.norm_stats_path.empty()) throw ConfigError("checkpoint carries no normalization stats; pass --norm-stats");
  return load_norm_stats(ck.norm_stats_path);
}

LossFlags parse_flags(const std::string& text, LossFlags base) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "adversarial") base.adversarial = true;
    else if (item == "reference") base.reference = true;
    else if (item == "gen_dys_only") base.gen_dys_only = true;
    else if (item == "disentangle") base.disentangle = true;
    else if (item == "reference_reverse_kl") base.reference_reverse_kl = true;
    else if (item == "none") base = LossFlags{};
    else throw ConfigError("unknown flag '" + item + "' (expected adversarial, reference, gen_dys_only, disentangle)");
  }
  return base;
}

std::string absolute_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

// ---------------------------------------------------------------------------

int cmd_prepare(const CommonArgs& c, const std::string& manifest_path, std::ostream& out) {
  Resolved r = resolve(c);
  r.settings.validate();
  const fs::path dir = make_run_dir(c.out_dir, "prepare");
  snapshot(dir, c, r);
  LoadedCorpus corpus = load_corpus(manifest_path, r.settings);
  fs::create_directories(dir / "features");
  CorpusManifest m = corpus.manifest;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const std::string file = "features/" + m.entries[i].utterance_id + ".fhvf";
    write_feature_file(dir / file, corpus.features[i]);
    m.entries[i].path = file;
    m.entries[i].features.reset();
  }
  write_manifest(m, dir / "corpus.manifest");
  save_norm_stats(dir / "norm.stats", fit_norm_stats(corpus.features));
  out << "manifest=" << (dir / "corpus.manifest").string() << "\n";
  out << "norm_stats=" << (dir / "norm.stats").string() << "\n";
  return kExitOk;
}

int cmd_synth(const CommonArgs& c, std::ostream& out) {
  Resolved r = resolve(c);
  r.settings.synth.validate();
  const fs::path dir = make_run_dir(c.out_dir, "synth");
  snapshot(dir, c, r);
  SynthCorpus corpus = synth_generate(r.settings.synth);
  const std::uint64_t digest = corpus_digest(corpus.manifest);
  fs::create_directories(dir / "features");
  CorpusManifest m = corpus.manifest;
  for (auto& e : m.entries) {
    const std::string file = "features/" + e.utterance_id + ".fhvf";
    write_feature_file(dir / file, *e.features);
    e.path = file;
    e.features.reset();
  }
  write_manifest(m, dir / "corpus.manifest");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  out << "digest=" << buf << "\n";
  out << "manifest=" << (dir / "corpus.manifest").string() << "\n";
  return kExitOk;
}

TrainHooks hooks_for(const fs::path& dir, std::ofstream& metrics) {
  metrics.open(dir / "metrics.log");
  if (!metrics) throw IoError("cannot write " + (dir / "metrics.log").string());
  TrainHooks h;
  h.metrics = &metrics;
  h.checkpoint_dir = dir / "checkpoints";
  h.dump_dir = dir / "dumps";
  return h;
}

int cmd_pretrain(const CommonArgs& c, const std::string& manifest_path, const std::string& norm_path,
                 const std::string& resume_path, std::ostream& out) {
  Resolved r = resolve(c);
  const fs::path dir = make_run_dir(c.out_dir, "pretrain");
  LoadedCorpus corpus = load_corpus(manifest_path, r.settings);
  const int dim = static_cast<int>(corpus.features.front().cols());
  if (r.explicit_keys.contains("model.feat_dim") && r.settings.model.feat_dim != dim)
    throw ConfigError("model.feat_dim " + std::to_string(r.settings.model.feat_dim) +
                      " does not match the corpus feature dimension " + std::to_string(dim));
  r.settings.model.feat_dim = dim;
  r.settings.validate();
  snapshot(dir, c, r);

  const NormStats stats = norm_path.empty() ? fit_norm_stats(corpus.features) : load_norm_stats(norm_path);
  save_norm_stats(dir / "norm.stats", stats);
  normalize_in_place(corpus.features, stats);
  const TrainCorpus tc =
      build_train_corpus(corpus.manifest, corpus.features, r.settings.model.seg_len, r.settings.train.train_shift);
  std::ofstream metrics;
  const TrainHooks hooks = hooks_for(dir, metrics);
  TrainResult res;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    if (ck.stage != Stage::kPretrain) throw ConfigError("--resume expects a pretraining checkpoint");
    res = resume(ck, tc, hooks);
  } else {
    res = pretrain(tc, r.settings.model, r.settings.priors, r.settings.train, hooks);
  }
  res.ckpt.norm_stats_path = absolute_string(dir / "norm.stats");
  save_checkpoint(res.ckpt, dir / "final.ckpt");
  out << "epochs=" << res.ckpt.epoch << "\n";
  out << "checkpoint=" << (dir / "final.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_finetune(const CommonArgs& c, const std::string& ckpt_path, const std::string& manifest_path,
                 const std::string& flags, const std::string& norm_path, std::ostream& out) {
  Resolved r = resolve(c);
  r.settings.train.flags = parse_flags(flags, r.settings.train.flags);
  const Checkpoint base = load_checkpoint(ckpt_path);
  r.settings.model = base.model.config();
  r.settings.priors = base.model.priors();
  r.settings.validate();
  const fs::path dir = make_run_dir(c.out_dir, "finetune");
  snapshot(dir, c, r);
  LoadedCorpus corpus = load_corpus(manifest_path, r.settings);
  const NormStats stats = stats_for(base, norm_path);
  save_norm_stats(dir / "norm.stats", stats);
  normalize_in_place(corpus.features, stats);
  const TrainCorpus tc =
      build_train_corpus(corpus.manifest, corpus.features, r.settings.model.seg_len, r.settings.train.train_shift);
  std::ofstream metrics;
  const TrainHooks hooks = hooks_for(dir, metrics);
  TrainResult res = finetune(base, tc, r.settings.train, hooks);
  res.ckpt.norm_stats_path = absolute_string(dir / "norm.stats");
  save_checkpoint(res.ckpt, dir / "final.ckpt");
  out << "epochs=" << res.ckpt.epoch << "\n";
  out << "checkpoint=" << (dir / "final.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_extract(const CommonArgs& c, const std::string& ckpt_path, const std::string& manifest_path, int shift,
                const std::string& which, const std::string& norm_path, std::ostream& out) {
  Resolved r = resolve(c);
  r.settings.validate();
  const FeatureKind kind = feature_kind_from_string(which);
  Checkpoint ck = load_checkpoint(ckpt_path);
  const fs::path dir = make_run_dir(c.out_dir, "extract");
  snapshot(dir, c, r);
  LoadedCorpus corpus = load_corpus(manifest_path, r.settings);
  normalize_in_place(corpus.features, stats_for(ck, norm_path));
  std::vector<UtteranceFeatures> feats;
  if (kind != FeatureKind::kFbank) feats = extract_corpus(ck.model, corpus.manifest, corpus.features, shift);
  const auto written = export_features(feats, corpus.manifest, dir, kind, &corpus.features);
  for (const auto& p : written) out << "manifest=" << p.string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& c, const std::string& protocol, const std::string& input, const std::string& manifest_path,
             const std::string& ckpt_path, int repeats, double threshold, int folds, int shift, int stride,
             const std::string& norm_path, std::ostream& out) {
  Resolved r = resolve(c);
  r.settings.validate();
  SplitSpec spec;
  spec.mode = protocol_from_string(protocol);
  spec.repeats = repeats;
  spec.threshold = threshold;
  spec.n_folds = folds;
  spec.validate();
  const InputKind kind = input_kind_from_string(input);
  if (kind != InputKind::kFbank && ckpt_path.empty()) throw ConfigError("--ckpt is required for input " + input);
  const fs::path dir = make_run_dir(c.out_dir, "eval");
  snapshot(dir, c, r);
  LoadedCorpus corpus = load_corpus(manifest_path, r.settings);

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < corpus.manifest.entries.size(); ++i) {
    const SpeakerMeta& s = corpus.manifest.speaker_of(corpus.manifest.entries[i]);
    if (spec.mode == Protocol::kKfold || s.intelligibility) keep.push_back(i);
  }
  if (keep.size() < corpus.manifest.entries.size())
    warn("utterances of speakers without an intelligibility score are left out of the " + protocol + " protocol");
  if (keep.empty()) throw EmptyInputError("no utterances qualify for the " + protocol + " protocol");

  EvalData data;
  data.n_labels = corpus.manifest.n_labels;
  data.speakers = corpus.manifest.speakers;
  for (std::size_t i : keep) {
    const auto& e = corpus.manifest.entries[i];
    data.utterance_ids.push_back(e.utterance_id);
    data.speaker_ids.push_back(e.speaker_id);
    data.labels.push_back(e.labels.value_or(LabelSet{}));
  }
  std::string method = "fbank";
  if (kind == InputKind::kFbank) {
    std::optional<NormStats> stats;
    if (!norm_path.empty()) stats = load_norm_stats(norm_path);
    std::vector<Mat> frames;
    for (std::size_t i : keep) frames.push_back(stats ? normalize(corpus.features[i], *stats) : corpus.features[i]);
    data.inputs[InputKind::kFbank] = std::move(frames);
  } else {
    Checkpoint ck = load_checkpoint(ckpt_path);
    method = ck.stage == Stage::kPretrain ? "pretrained" : "finetuned";
    normalize_in_place(corpus.features, stats_for(ck, norm_path));
    std::vector<Mat> z1, z2;
    for (std::size_t i : keep) {
      auto f = extract_features(ck.model, corpus.manifest.entries[i].utterance_id, corpus.features[i], shift);
      if (!f) throw EmptyInputError("utterance " + corpus.manifest.entries[i].utterance_id + " is shorter than one segment");
      z1.push_back(std::move(f->mu_z1));
      z2.push_back(std::move(f->mu_z2));
    }
    data.inputs[InputKind::kZ1] = std::move(z1);
    data.inputs[InputKind::kZ2] = std::move(z2);
    if (ck.stage == Stage::kFinetune) {
      const LossFlags& f = ck.train.flags;
      std::string tags;
      if (f.adversarial) tags += "+adversarial";
      if (f.reference) tags += "+reference";
      if (f.gen_dys_only) tags += "+dys_only";
      if (f.disentangle) tags += "+disentangle";
      if (!tags.empty()) method = "finetuned" + tags;
    }
  }
  EvalOptions opts;
  opts.intent.stride = stride;
  const EvalReport rep = run_eval_suite(data, kind, spec, opts);
  {
    std::ofstream t(dir / "report.tsv");
    if (!t) throw IoError("cannot write report in " + dir.string());
    t << rep.table();
    std::ofstream s(dir / "summary.txt");
    s << rep.summary() << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", rep.mean);
  out << rep.summary() << "\n";
  out << "method\tprotocol\tinput\tmean\n" << method << '\t' << to_string(spec.mode) << '\t' << to_string(kind) << '\t'
      << buf << "\n";
  return kExitOk;
}

int cmd_reproduce(const CommonArgs& c, const std::string& seeds_text, const std::string& methods_text,
                  std::ostream& out) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::uint64_t v = 0;
    parse_value("--seeds", item, v);
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("--seeds lists no seeds");
  ExperimentOptions opts;
  if (!methods_text.empty()) {
    opts.methods.clear();
    std::stringstream ms(methods_text);
    while (std::getline(ms, item, ',')) {
      bool found = false;
      for (Method m : kAllMethods)
        if (to_string(m) == item) {
          opts.methods.push_back(m);
          found = true;
        }
      if (!found) throw ConfigError("unknown method '" + item + "'");
    }
  }
  KeyValues kv;
  if (!c.config.empty()) kv = read_config_file(c.config);
  for (const auto& [k, v] : parse_overrides(c.overrides)) kv[k] = v;
  SynthExperimentConfig base = default_synth_experiment(seeds.front());
  apply_experiment_overrides(base, kv);
  base.validate();
  const fs::path dir = make_run_dir(c.out_dir, "reproduce-synth");
  write_config_file(dir / "config.resolved", experiment_to_kv(base));
  {
    std::ofstream cmd(dir / "command.txt");
    cmd << c.command_line << "\n";
  }
  const std::string grid = reproduce_synthetic_table(dir, seeds, &base, &out, &opts);
  out << grid;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-scale disentangled speech representations with adversarial domain invariance", "fhvae"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonArgs common;
  std::string manifest, ckpt, flags, which = "both", norm, resume_path, protocol = "ood", input = "z1", seeds = "0", methods;
  int shift = 1, repeats = 5, folds = 6, stride = 1;
  double threshold = 70.0;

  auto* prepare = app.add_subcommand("prepare", "Compute features for a manifest and fit normalization stats");
  add_common(prepare, common);
  prepare->add_option("--manifest", manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-factor corpus");
  add_common(synth, common);

  auto* pre = app.add_subcommand("pretrain", "Pretrain the model on control-domain data");
  add_common(pre, common);
  pre->add_option("--manifest", manifest, "Training corpus manifest")->required()->check(CLI::ExistingFile);
  pre->add_option("--norm-stats", norm, "Normalization stats (default: fit on the corpus)")->check(CLI::ExistingFile);
  pre->add_option("--resume", resume_path, "Continue from a latest.ckpt")->check(CLI::ExistingFile);

  auto* fine = app.add_subcommand("finetune", "Finetune a pretrained checkpoint on mixed-domain data");
  add_common(fine, common);
  fine->add_option("--ckpt", ckpt, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  fine->add_option("--manifest", manifest, "Finetuning corpus manifest")->required()->check(CLI::ExistingFile);
  fine->add_option("--flags", flags, "Comma-separated: adversarial,reference,gen_dys_only,disentangle");
  fine->add_option("--norm-stats", norm, "Normalization stats (default: the checkpoint's)")->check(CLI::ExistingFile);

  auto* ext = app.add_subcommand("extract", "Extract per-segment latent means");
  add_common(ext, common);
  ext->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ext->add_option("--manifest", manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
  ext->add_option("--shift", shift, "Segment shift in frames")->check(CLI::PositiveNumber);
  ext->add_option("--which", which, "z1, z2, both or fbank")->check(CLI::IsMember({"z1", "z2", "both", "fbank"}));
  ext->add_option("--norm-stats", norm, "Normalization stats (default: the checkpoint's)")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Run an evaluation protocol");
  add_common(ev, common);
  ev->add_option("--protocol", protocol, "ood, indomain or kfold")->check(CLI::IsMember({"ood", "indomain", "kfold"}));
  ev->add_option("--input", input, "fbank, z1, z2 or z12")->check(CLI::IsMember({"fbank", "z1", "z2", "z12"}));
  ev->add_option("--manifest", manifest, "Evaluation corpus manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--ckpt", ckpt, "Checkpoint (required unless --input fbank)")->check(CLI::ExistingFile);
  ev->add_option("--repeats", repeats, "Repeats (seeds 0..repeats-1)")->check(CLI::PositiveNumber);
  ev->add_option("--threshold", threshold, "Out-of-domain intelligibility threshold");
  ev->add_option("--folds", folds, "Number of folds for kfold")->check(CLI::Range(2, 1000));
  ev->add_option("--shift", shift, "Extraction segment shift")->check(CLI::PositiveNumber);
  ev->add_option("--stride", stride, "Intent model input stride")->check(CLI::PositiveNumber);
  ev->add_option("--norm-stats", norm, "Normalization stats")->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("reproduce-synth", "Run the synthetic comparison table");
  add_common(rep, common);
  rep->add_option("--seeds", seeds, "Comma-separated seeds");
  rep->add_option("--methods", methods, "Comma-separated subset of the method rows");

  for (const auto& a : args) common.command_line += (common.command_line.empty() ? "fhvae " : " ") + a;
  if (common.command_line.empty()) common.command_line = "fhvae";
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: UsageError: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(common, manifest, out);
    if (synth->parsed()) return cmd_synth(common, out);
    if (pre->parsed()) return cmd_pretrain(common, manifest, norm, resume_path, out);
    if (fine->parsed()) return cmd_finetune(common, ckpt, manifest, flags, norm, out);
    if (ext->parsed()) return cmd_extract(common, ckpt, manifest, shift, which, norm, out);
    if (ev->parsed())
      return cmd_eval(common, protocol, input, manifest, ckpt, repeats, threshold, folds, shift, stride, norm, out);
    if (rep->parsed()) return cmd_reproduce(common, seeds, methods, out);
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: InternalError: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fhvae
