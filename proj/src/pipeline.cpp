#include "fhvae/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace fhvae {

namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::kPretrained: return "pretrained";
    case Method::kFinetuned: return "finetuned";
    case Method::kAdversarial: return "adversarial";
    case Method::kReference: return "adv+reference";
    case Method::kDysOnly: return "adv+ref+dys_only";
    case Method::kDisentangle: return "adv+ref+dys+disentangle";
  }
  return "?";
}

LossFlags method_flags(Method m) {
  LossFlags f;
  f.adversarial = m == Method::kAdversarial || m == Method::kReference || m == Method::kDysOnly ||
                  m == Method::kDisentangle;
  f.reference = m == Method::kReference || m == Method::kDysOnly || m == Method::kDisentangle;
  f.gen_dys_only = m == Method::kDysOnly || m == Method::kDisentangle;
  f.disentangle = m == Method::kDisentangle;
  return f;
}

void SynthExperimentConfig::validate() const {
  pretrain_corpus.validate();
  finetune_corpus.validate();
  eval_corpus.validate();
  model.validate();
  priors.validate();
  pretrain.validate();
  finetune.validate();
  if (extract_shift < 1) throw ConfigError("extract_shift must be >= 1");
  if (n_folds < 2 || repeats < 1 || seqid_chunk < 1) throw ConfigError("invalid evaluation settings");
  if (pretrain_corpus.obs_dim != model.feat_dim || finetune_corpus.obs_dim != model.feat_dim ||
      eval_corpus.obs_dim != model.feat_dim)
    throw ConfigError("synthetic obs_dim must equal model.feat_dim");
}

SynthExperimentConfig default_synth_experiment(std::uint64_t seed) {
  SynthExperimentConfig c;
  c.seed = seed;

  SynthConfig base;
  base.obs_dim = 24;
  base.seq_factor_dim = 4;
  base.seg_factor_dim = 4;
  base.segments_per_sequence = 6;
  base.frames_per_segment = 20;
  base.noise_std = 0.3;
  base.n_labels = 6;
  base.domain_shift_strength = 2.5;
  base.intelligibility_lo = 30.0;
  base.world_seed = derive_seed(seed, Stream::kSynthWorld);

  c.pretrain_corpus = base;
  c.pretrain_corpus.n_speakers = 16;
  c.pretrain_corpus.n_sequences = 64;
  c.pretrain_corpus.dysarthric_fraction = 0.0;
  c.pretrain_corpus.seed = derive_seed(seed, Stream::kSynthSample, 1);
  c.pretrain_corpus.speaker_prefix = "pre";

  c.finetune_corpus = base;
  c.finetune_corpus.n_speakers = 24;
  c.finetune_corpus.n_sequences = 96;
  c.finetune_corpus.dysarthric_fraction = 0.5;
  c.finetune_corpus.seed = derive_seed(seed, Stream::kSynthSample, 2);
  c.finetune_corpus.speaker_prefix = "ft";

  c.eval_corpus = base;
  c.eval_corpus.n_speakers = 48;
  c.eval_corpus.n_sequences = 384;
  c.eval_corpus.dysarthric_fraction = 0.5;
  c.eval_corpus.seed = derive_seed(seed, Stream::kSynthSample, 3);
  c.eval_corpus.speaker_prefix = "ev";

  c.model.feat_dim = base.obs_dim;
  c.model.seg_len = 20;
  c.model.hidden = 32;
  c.model.layers = 1;
  c.model.z1_dim = 8;
  c.model.z2_dim = 8;

  c.pretrain.seed = derive_seed(seed, Stream::kInit, 1);
  c.pretrain.batch_size = 64;
  c.pretrain.hier_sample_size = 5000;
  c.pretrain.max_epochs = 30;
  c.pretrain.patience = 5;
  c.pretrain.train_shift = 8;
  c.pretrain.log_steps = false;

  c.finetune = c.pretrain;
  c.finetune.seed = derive_seed(seed, Stream::kInit, 2);
  c.finetune.max_epochs = 20;
  c.finetune.lr_disc = 2e-3;
  c.finetune.n_disc_steps = 3;
  c.finetune.weights.gen = 50.0;
  c.finetune.weights.dstg = 20.0;

  c.eval.intent.stride = 4;
  c.extract_shift = 2;
  c.repeats = 10;
  return c;
}

namespace {

template <class F>
void visit_experiment(SynthExperimentConfig& c, F&& f) {
  f("experiment.extract_shift", c.extract_shift);
  f("experiment.n_folds", c.n_folds);
  f("experiment.repeats", c.repeats);
  f("experiment.ood_threshold", c.ood_threshold);
  f("experiment.seqid_chunk", c.seqid_chunk);
  f("probe.hidden", c.eval.probe.hidden);
  f("probe.batch_size", c.eval.probe.batch_size);
  f("probe.lr", c.eval.probe.lr);
  f("probe.epochs", c.eval.probe.epochs);
  f("intent.hidden", c.eval.intent.hidden);
  f("intent.batch_size", c.eval.intent.batch_size);
  f("intent.lr", c.eval.intent.lr);
  f("intent.epochs", c.eval.intent.epochs);
  f("intent.threshold", c.eval.intent.threshold);
  f("intent.stride", c.eval.intent.stride);
}

}  // namespace

KeyValues experiment_to_kv(const SynthExperimentConfig& cfg) {
  KeyValues kv;
  store_fields(kv, "model", cfg.model);
  store_fields(kv, "priors", cfg.priors);
  store_fields(kv, "pretrain", cfg.pretrain);
  store_fields(kv, "finetune", cfg.finetune);
  store_fields(kv, "pretrain_corpus", cfg.pretrain_corpus);
  store_fields(kv, "finetune_corpus", cfg.finetune_corpus);
  store_fields(kv, "eval_corpus", cfg.eval_corpus);
  visit_experiment(const_cast<SynthExperimentConfig&>(cfg),
                   [&](const char* name, auto& field) { kv[name] = render_value(field); });
  kv["experiment.seed"] = render_value(cfg.seed);
  return kv;
}

void apply_experiment_overrides(SynthExperimentConfig& cfg, const KeyValues& kv) {
  const KeyValues known = experiment_to_kv(cfg);
  KeyValues direct;
  for (const auto& [k, v] : kv) {
    if (k.rfind("corpus.", 0) == 0) {
      const std::string field = k.substr(7);
      if (!known.contains("eval_corpus." + field)) throw ConfigError("unknown configuration key '" + k + "'");
      for (const char* c : {"pretrain_corpus.", "finetune_corpus.", "eval_corpus."}) direct[c + field] = v;
    } else if (k == "experiment.seed" || !known.contains(k)) {
      throw ConfigError("unknown configuration key '" + k + "'");
    }
  }
  for (const auto& [k, v] : kv)
    if (k.rfind("corpus.", 0) != 0) direct[k] = v;
  load_fields(direct, "model", cfg.model);
  load_fields(direct, "priors", cfg.priors);
  load_fields(direct, "pretrain", cfg.pretrain);
  load_fields(direct, "finetune", cfg.finetune);
  load_fields(direct, "pretrain_corpus", cfg.pretrain_corpus);
  load_fields(direct, "finetune_corpus", cfg.finetune_corpus);
  load_fields(direct, "eval_corpus", cfg.eval_corpus);
  visit_experiment(cfg, [&](const char* name, auto& field) {
    auto it = direct.find(name);
    if (it != direct.end()) parse_value(name, it->second, field);
  });
}

SynthExperimentConfig reseeded(SynthExperimentConfig cfg, std::uint64_t seed) {
  const SynthExperimentConfig fresh = default_synth_experiment(seed);
  cfg.seed = seed;
  for (SynthConfig* c : {&cfg.pretrain_corpus, &cfg.finetune_corpus, &cfg.eval_corpus}) c->world_seed = fresh.pretrain_corpus.world_seed;
  cfg.pretrain_corpus.seed = fresh.pretrain_corpus.seed;
  cfg.finetune_corpus.seed = fresh.finetune_corpus.seed;
  cfg.eval_corpus.seed = fresh.eval_corpus.seed;
  cfg.pretrain.seed = fresh.pretrain.seed;
  cfg.finetune.seed = fresh.finetune.seed;
  return cfg;
}

const MethodScores& SeedResult::row(Method m) const {
  for (const auto& r : rows)
    if (r.method == m) return r;
  throw ContractError("seed result has no row for method " + to_string(m));
}

double cross_correlation_energy(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows() && a.rows() >= 2, "cross_correlation_energy: need matching rows (>= 2)");
  auto standardize = [](const Mat& m, std::vector<bool>& ok) {
    Mat c = m.rowwise() - m.colwise().mean();
    ok.assign(static_cast<std::size_t>(m.cols()), true);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double n = c.col(j).norm();
      if (n > 0.0) {
        c.col(j) /= n;
      } else {
        ok[static_cast<std::size_t>(j)] = false;
        c.col(j).setZero();
      }
    }
    return c;
  };
  std::vector<bool> oka, okb;
  const Mat sa = standardize(a, oka), sb = standardize(b, okb);
  return (sa.transpose() * sb).squaredNorm();
}

double sequence_identity_accuracy(const std::vector<Mat>& per_sequence, int chunk, const ProbeConfig& cfg) {
  require(chunk >= 1 && per_sequence.size() >= 2, "sequence_identity_accuracy: need >= 2 sequences");
  std::vector<RowVec> xtr, xte;
  std::vector<int> ytr, yte;
  for (std::size_t s = 0; s < per_sequence.size(); ++s) {
    const Mat& m = per_sequence[s];
    const Eigen::Index n_chunks = m.rows() / chunk;
    require(n_chunks >= 2, "sequence_identity_accuracy: each sequence needs at least two chunks");
    for (Eigen::Index k = 0; k < n_chunks; ++k) {
      const RowVec v = m.middleRows(k * chunk, chunk).colwise().mean();
      (k % 2 == 0 ? xtr : xte).push_back(v);
      (k % 2 == 0 ? ytr : yte).push_back(static_cast<int>(s));
    }
  }
  auto stack = [](const std::vector<RowVec>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
    return out;
  };
  const Mat a = stack(xtr), b = stack(xte);
  Probe probe = train_probe(a, ytr, static_cast<int>(per_sequence.size()), cfg);
  return probe.accuracy(b, yte);
}

namespace {

std::vector<FeatureMatrix> inline_features(const CorpusManifest& m) {
  std::vector<FeatureMatrix> out;
  for (const auto& e : m.entries) {
    require(e.features.has_value(), "synthetic manifest entry without inline features");
    out.push_back(*e.features);
  }
  return out;
}

Mat strided_rows(const Mat& m, int stride) {
  const Eigen::Index n = (m.rows() + stride - 1) / stride;
  Mat out(n, m.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = m.row(i * stride);
  return out;
}

void say(std::ostream* out, const std::string& line) {
  if (out) *out << line << std::endl;
}

EvalData make_eval_data(const CorpusManifest& m, const std::vector<std::size_t>& keep) {
  EvalData d;
  d.n_labels = m.n_labels;
  d.speakers = m.speakers;
  for (std::size_t i : keep) {
    const auto& e = m.entries[i];
    d.utterance_ids.push_back(e.utterance_id);
    d.speaker_ids.push_back(e.speaker_id);
    d.labels.push_back(e.labels.value_or(LabelSet{}));
  }
  return d;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
std::vector<T> subset(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

SeedResult run_synth_seed(const SynthExperimentConfig& cfg, const ExperimentOptions& opts) {
  cfg.validate();
  SeedResult result;
  result.seed = cfg.seed;

  const SynthCorpus pre = synth_generate(cfg.pretrain_corpus);
  const SynthCorpus ft = synth_generate(cfg.finetune_corpus);
  const SynthCorpus ev = synth_generate(cfg.eval_corpus);
  const std::vector<FeatureMatrix> pre_raw = inline_features(pre.manifest);
  const auto [pre_feats, stats] = normalize_corpus(pre_raw, std::nullopt);
  const auto [ft_feats, ft_stats] = normalize_corpus(inline_features(ft.manifest), stats);
  const auto [ev_feats, ev_stats] = normalize_corpus(inline_features(ev.manifest), stats);
  (void)ft_stats;
  (void)ev_stats;

  const int seg_len = cfg.model.seg_len;
  const TrainCorpus pre_tc = build_train_corpus(pre.manifest, pre_feats, seg_len, cfg.pretrain.train_shift);
  const TrainCorpus ft_tc = build_train_corpus(ft.manifest, ft_feats, seg_len, cfg.finetune.train_shift);

  // Utterance subsets of the evaluation corpus.
  std::vector<std::size_t> all_idx, dys_idx, ctrl_idx;
  for (std::size_t i = 0; i < ev.manifest.entries.size(); ++i) {
    all_idx.push_back(i);
    const Domain d = ev.manifest.speaker_of(ev.manifest.entries[i]).domain;
    (d == Domain::kDysarthric ? dys_idx : ctrl_idx).push_back(i);
  }

  SplitSpec kfold{Protocol::kKfold, cfg.ood_threshold, cfg.n_folds, cfg.repeats};
  SplitSpec ood{Protocol::kOutOfDomain, cfg.ood_threshold, cfg.n_folds, cfg.repeats};
  SplitSpec indomain{Protocol::kInDomain, cfg.ood_threshold, cfg.n_folds, cfg.repeats};

  if (opts.fbank && (opts.intent || opts.probes)) {
    std::vector<Mat> frames;
    for (const auto& f : ev_feats) frames.push_back(strided_rows(f, cfg.extract_shift));
    if (opts.probes) {
      EvalData d = make_eval_data(ev.manifest, all_idx);
      d.inputs[InputKind::kFbank] = frames;
      result.fbank_probe = run_eval_suite(d, InputKind::kFbank, kfold, cfg.eval).mean;
    }
    if (opts.intent) {
      EvalData d = make_eval_data(ev.manifest, dys_idx);
      d.inputs[InputKind::kFbank] = subset(frames, dys_idx);
      result.fbank_ood_f1 = run_eval_suite(d, InputKind::kFbank, ood, cfg.eval).mean;
      result.fbank_indomain_f1 = run_eval_suite(d, InputKind::kFbank, indomain, cfg.eval).mean;
    }
    say(opts.progress, "seed " + std::to_string(cfg.seed) + ": fbank baseline done");
  }

  auto log_header = [&](const std::string& run) {
    if (opts.metrics) *opts.metrics << "# run=" << run << " seed=" << cfg.seed << '\n';
  };
  TrainHooks hooks;
  hooks.metrics = opts.metrics;
  log_header("pretrain");
  auto t0 = std::chrono::steady_clock::now();
  const Checkpoint pretrained = pretrain(pre_tc, cfg.model, cfg.priors, cfg.pretrain, hooks).ckpt;
  result.pretrain_seconds = seconds_since(t0);
  say(opts.progress, "seed " + std::to_string(cfg.seed) + ": pretrained (" + std::to_string(pretrained.epoch) + " epochs)");

  if (opts.seqid) {
    Fhvae model = pretrained.model;
    std::vector<Mat> z1, z2;
    for (std::size_t i : ctrl_idx) {
      auto f = extract_features(model, ev.manifest.entries[i].utterance_id, ev_feats[i], cfg.extract_shift);
      if (!f) continue;
      z1.push_back(f->mu_z1);
      z2.push_back(f->mu_z2);
    }
    ProbeConfig pc = cfg.eval.probe;
    pc.seed = derive_seed(cfg.seed, Stream::kProbe, 99);
    result.seqid_z1 = sequence_identity_accuracy(z1, cfg.seqid_chunk, pc);
    result.seqid_z2 = sequence_identity_accuracy(z2, cfg.seqid_chunk, pc);
    char buf[160];
    std::snprintf(buf, sizeof buf, "seed %llu: sequence-identity probe z1=%.4f z2=%.4f",
                  static_cast<unsigned long long>(cfg.seed), result.seqid_z1, result.seqid_z2);
    say(opts.progress, buf);
  }

  for (Method m : opts.methods) {
    MethodScores row;
    row.method = m;
    t0 = std::chrono::steady_clock::now();
    Checkpoint ck;
    if (m == Method::kPretrained) {
      ck = pretrained;
    } else {
      TrainingConfig tc = cfg.finetune;
      tc.flags = method_flags(m);
      log_header(to_string(m));
      ck = finetune(pretrained, ft_tc, tc, hooks).ckpt;
    }
    row.train_seconds = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    std::vector<Mat> z1(ev_feats.size()), z2(ev_feats.size());
    for (std::size_t i = 0; i < ev_feats.size(); ++i) {
      auto f = extract_features(ck.model, ev.manifest.entries[i].utterance_id, ev_feats[i], cfg.extract_shift);
      require(f.has_value(), "evaluation utterance shorter than one segment");
      z1[i] = std::move(f->mu_z1);
      z2[i] = std::move(f->mu_z2);
    }
    {
      Eigen::Index rows = 0;
      for (const auto& m1 : z1) rows += m1.rows();
      Mat a(rows, z1.front().cols()), b(rows, z2.front().cols());
      Eigen::Index r = 0;
      for (std::size_t i = 0; i < z1.size(); ++i) {
        a.middleRows(r, z1[i].rows()) = z1[i];
        b.middleRows(r, z2[i].rows()) = z2[i];
        r += z1[i].rows();
      }
      row.cross_corr = cross_correlation_energy(a, b);
    }
    row.extract_seconds = seconds_since(t0);
    if (opts.probes) {
      t0 = std::chrono::steady_clock::now();
      EvalData d = make_eval_data(ev.manifest, all_idx);
      d.inputs[InputKind::kZ1] = z1;
      d.inputs[InputKind::kZ2] = z2;
      row.probe_z1 = run_eval_suite(d, InputKind::kZ1, kfold, cfg.eval).mean;
      row.probe_z2 = run_eval_suite(d, InputKind::kZ2, kfold, cfg.eval).mean;
      row.probe_seconds = seconds_since(t0);
      row.probe_z12 = run_eval_suite(d, InputKind::kZ12, kfold, cfg.eval).mean;
    }
    if (opts.intent) {
      t0 = std::chrono::steady_clock::now();
      EvalData d = make_eval_data(ev.manifest, dys_idx);
      d.inputs[InputKind::kZ1] = subset(z1, dys_idx);
      row.ood_f1 = run_eval_suite(d, InputKind::kZ1, ood, cfg.eval).mean;
      row.indomain_f1 = run_eval_suite(d, InputKind::kZ1, indomain, cfg.eval).mean;
      row.intent_seconds = seconds_since(t0);
    }
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "seed %llu: %-24s ood=%.4f indomain=%.4f probe_z1=%.4f probe_z2=%.4f probe_z12=%.4f xcorr=%.4f "
                  "time=%.0f/%.0f/%.0f/%.0fs",
                  static_cast<unsigned long long>(cfg.seed), to_string(m).c_str(), row.ood_f1, row.indomain_f1,
                  row.probe_z1, row.probe_z2, row.probe_z12, row.cross_corr, row.train_seconds, row.extract_seconds,
                  row.probe_seconds, row.intent_seconds);
    say(opts.progress, buf);
    result.rows.push_back(row);
  }
  if (opts.metrics) opts.metrics->flush();
  return result;
}

std::string render_grid(const std::vector<SeedResult>& results) {
  require(!results.empty(), "render_grid: no results");
  std::ostringstream out;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  const bool spread = results.size() > 1;
  out << "method\tseed\tood_f1\tindomain_f1\tprobe_z1\tprobe_z2\tprobe_z12\n";
  using Getter = double (*)(const MethodScores&);
  const Getter cols[] = {[](const MethodScores& s) { return s.ood_f1; },
                         [](const MethodScores& s) { return s.indomain_f1; },
                         [](const MethodScores& s) { return s.probe_z1; },
                         [](const MethodScores& s) { return s.probe_z2; },
                         [](const MethodScores& s) { return s.probe_z12; }};
  for (const auto& first : results.front().rows) {
    const Method m = first.method;
    std::vector<std::vector<double>> values(5);
    for (const auto& r : results) {
      const MethodScores& s = r.row(m);
      out << to_string(m) << '\t' << r.seed;
      for (int c = 0; c < 5; ++c) {
        values[c].push_back(cols[c](s));
        out << '\t' << num(cols[c](s));
      }
      out << '\n';
    }
    out << to_string(m) << "\tmean";
    for (const auto& v : values) {
      double sum = 0.0;
      for (double x : v) sum += x;
      out << '\t' << num(sum / static_cast<double>(v.size()));
    }
    out << '\n';
    if (spread) {
      out << to_string(m) << "\tstd";
      for (const auto& v : values) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out << '\t' << num(std::sqrt(ss / static_cast<double>(v.size() - 1)));
      }
      out << '\n';
    }
  }
  out << "\nbaseline\tseed\tood_f1\tindomain_f1\tprobe\n";
  for (const auto& r : results)
    out << "fbank\t" << r.seed << '\t' << num(r.fbank_ood_f1) << '\t' << num(r.fbank_indomain_f1) << '\t'
        << num(r.fbank_probe) << '\n';
  out << "\nsequence_identity\tseed\tz1\tz2\n";
  for (const auto& r : results) out << "pretrained\t" << r.seed << '\t' << num(r.seqid_z1) << '\t' << num(r.seqid_z2) << '\n';
  return out.str();
}

std::string reproduce_synthetic_table(const fs::path& out_dir, const std::vector<std::uint64_t>& seeds,
                                      const SynthExperimentConfig* base, std::ostream* progress,
                                      const ExperimentOptions* options) {
  require(!seeds.empty(), "reproduce_synthetic_table: no seeds");
  fs::create_directories(out_dir);
  std::vector<SeedResult> results;
  for (std::uint64_t seed : seeds) {
    const SynthExperimentConfig cfg = base ? reseeded(*base, seed) : default_synth_experiment(seed);
    std::ofstream metrics(out_dir / ("metrics_seed" + std::to_string(seed) + ".log"));
    if (!metrics) throw IoError("cannot write metrics log under " + out_dir.string());
    ExperimentOptions opts = options ? *options : ExperimentOptions{};
    opts.metrics = &metrics;
    opts.progress = progress;
    results.push_back(run_synth_seed(cfg, opts));
  }
  const std::string grid = render_grid(results);
  std::ofstream g(out_dir / "grid.tsv");
  if (!g) throw IoError("cannot write " + (out_dir / "grid.tsv").string());
  g << grid;
  return grid;
}

}  // namespace fhvae
