#include "fhvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <set>

#include "fhvae/config.hpp"

namespace fhvae {

namespace fs = std::filesystem;

void TrainingConfig::validate() const {
  if (!(lr_fhvae > 0.0) || !(lr_disc > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (hier_sample_size < batch_size) throw ConfigError("hier_sample_size must be >= batch_size");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 0 || patience > max_epochs) throw ConfigError("patience must lie in [0, max_epochs]");
  if (n_disc_steps < 1) throw ConfigError("n_disc_steps must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in [0, 1)");
  if (train_shift < 1) throw ConfigError("train_shift must be >= 1");
  weights.validate();
}

std::size_t TrainCorpus::segment_total() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.segments.size();
  return n;
}

bool TrainCorpus::has_domain(Domain d) const {
  return std::any_of(sequences.begin(), sequences.end(), [&](const TrainSequence& s) { return s.domain == d; });
}

TrainCorpus build_train_corpus(const CorpusManifest& manifest, const std::vector<FeatureMatrix>& features, int seg_len,
                               int shift) {
  require(features.size() == manifest.entries.size(), "build_train_corpus: one feature matrix per manifest entry");
  TrainCorpus corpus;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& e = manifest.entries[i];
    const Mat& f = features[i];
    if (corpus.feat_dim == 0) corpus.feat_dim = static_cast<int>(f.cols());
    if (f.cols() != corpus.feat_dim) throw ContractError("build_train_corpus: inconsistent feature dimension");
    TrainSequence seq;
    seq.utterance_id = e.utterance_id;
    seq.speaker_id = e.speaker_id;
    seq.domain = manifest.speaker_of(e).domain;
    for (auto& rec : segment_utterance(f, seg_len, shift)) seq.segments.push_back(std::move(rec.x));
    if (seq.segments.empty()) continue;
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

Mat compute_seq_means(Fhvae& model, const TrainCorpus& corpus, const std::vector<int>& sequences) {
  const int z2 = model.config().z2_dim;
  Mat sums = Mat::Zero(static_cast<Eigen::Index>(sequences.size()), z2);
  Mat result(static_cast<Eigen::Index>(sequences.size()), z2);
  constexpr std::size_t kChunk = 256;
  std::vector<const Mat*> chunk;
  std::vector<int> owner;
  auto flush = [&] {
    if (chunk.empty()) return;
    const Mat packed = pack_segments(std::span<const Mat* const>(chunk));
    const Mat means = model.z2_means(packed, static_cast<int>(chunk.size()));
    for (std::size_t b = 0; b < chunk.size(); ++b) sums.row(owner[b]) += means.row(static_cast<Eigen::Index>(b));
    chunk.clear();
    owner.clear();
  };
  for (std::size_t k = 0; k < sequences.size(); ++k) {
    for (const auto& s : corpus.sequences[sequences[k]].segments) {
      chunk.push_back(&s);
      owner.push_back(static_cast<int>(k));
      if (chunk.size() == kChunk) flush();
    }
  }
  flush();
  const auto& p = model.priors();
  for (std::size_t k = 0; k < sequences.size(); ++k) {
    const double n = static_cast<double>(corpus.sequences[sequences[k]].segments.size());
    require(n > 0, "compute_seq_means: sequence without segments");
    result.row(static_cast<Eigen::Index>(k)) = sums.row(static_cast<Eigen::Index>(k)) / (n + p.var_z2 / p.var_mu2);
  }
  return result;
}

HierarchicalSampler::HierarchicalSampler(const TrainCorpus& corpus, std::vector<int> pool, int cache_size,
                                         int batch_size, std::uint64_t seed)
    : corpus_(corpus), pool_(std::move(pool)), cache_size_(cache_size), batch_size_(batch_size), rng_(seed) {
  require(!pool_.empty(), "hierarchical sampling needs at least one sequence");
  require(cache_size >= 1 && batch_size >= 1, "cache and batch sizes must be >= 1");
  rng_.shuffle(pool_);
}

bool HierarchicalSampler::next_cache(Fhvae& model) {
  if (cursor_ >= pool_.size()) return false;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cache_size_), pool_.size() - cursor_);
  cache_.sequences.assign(pool_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                          pool_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  cache_.n_segments.clear();
  std::vector<BatchItem> items;
  for (std::size_t slot = 0; slot < cache_.sequences.size(); ++slot) {
    const int n = static_cast<int>(corpus_.sequences[cache_.sequences[slot]].segments.size());
    cache_.n_segments.push_back(n);
    for (int s = 0; s < n; ++s) items.push_back({static_cast<int>(slot), s});
  }
  cache_.mu2 = compute_seq_means(model, corpus_, cache_.sequences);
  rng_.shuffle(items);
  batches_.clear();
  for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(batch_size_)) {
    const std::size_t end = std::min(items.size(), i + static_cast<std::size_t>(batch_size_));
    batches_.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i), items.begin() + static_cast<std::ptrdiff_t>(end));
  }
  ++caches_drawn_;
  return true;
}

void Adam::step(const std::vector<ad::Parameter*>& params) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (state_.m.size() != params.size()) {
    state_.m.clear();
    state_.v.clear();
    for (const auto* p : params) {
      state_.m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      state_.v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++state_.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    Mat& m = state_.m[i];
    Mat& v = state_.v[i];
    m = b1 * m + (1.0 - b1) * p.grad;
    v = b2 * v + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

std::uint64_t parameter_hash(const std::vector<ad::Parameter*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      std::uint64_t bits;
      const double v = p->value.data()[i];
      std::memcpy(&bits, &v, sizeof bits);
      h = mix64(h ^ bits);
    }
  }
  return h;
}

std::vector<int> validation_split(const TrainCorpus& corpus, double fraction, std::uint64_t seed) {
  const int n = static_cast<int>(corpus.sequences.size());
  int n_val = static_cast<int>(std::floor(fraction * n + 0.5));
  n_val = std::clamp(n_val, 0, std::max(0, n - 1));
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, Stream::kSplit));
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(n_val));
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

void store_params(TensorArchive& a, const std::string& prefix, const std::vector<ad::Parameter*>& params) {
  for (const auto* p : params) a.tensors[prefix + p->name] = p->value;
}

void restore_params(const TensorArchive& a, const std::string& prefix, const std::vector<ad::Parameter*>& params) {
  for (auto* p : params) {
    const Mat& m = a.tensor(prefix + p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw FormatError("checkpoint tensor '" + prefix + p->name + "' has the wrong shape");
    p->value = m;
    p->zero_grad();
  }
}

void store_adam(TensorArchive& a, const std::string& prefix, const AdamState& s,
                const std::vector<ad::Parameter*>& params) {
  a.meta[prefix + ".step"] = std::to_string(s.step);
  if (s.m.size() != params.size()) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    a.tensors[prefix + "/m/" + params[i]->name] = s.m[i];
    a.tensors[prefix + "/v/" + params[i]->name] = s.v[i];
  }
}

AdamState restore_adam(const TensorArchive& a, const std::string& prefix, const std::vector<ad::Parameter*>& params) {
  AdamState s;
  s.step = std::stol(a.get(prefix + ".step"));
  if (params.empty() || !a.has_tensor(prefix + "/m/" + params.front()->name)) return s;
  for (const auto* p : params) {
    s.m.push_back(a.tensor(prefix + "/m/" + p->name));
    s.v.push_back(a.tensor(prefix + "/v/" + p->name));
  }
  return s;
}

int meta_int(const TensorArchive& a, const std::string& key) {
  int v = 0;
  try {
    parse_value(key, a.get(key), v);
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  return v;
}

}  // namespace

TensorArchive to_archive(const Checkpoint& ck) {
  TensorArchive a;
  auto& model = const_cast<Fhvae&>(ck.model);
  a.meta["stage"] = ck.stage == Stage::kPretrain ? "pretrain" : "finetune";
  a.meta["epoch"] = std::to_string(ck.epoch);
  a.meta["global_step"] = std::to_string(ck.global_step);
  a.meta["best_val"] = format_double(ck.best_val);
  a.meta["bad_epochs"] = std::to_string(ck.bad_epochs);
  a.meta["finished"] = ck.finished ? "1" : "0";
  a.meta["norm_stats_path"] = ck.norm_stats_path;
  a.meta["has_disc"] = ck.disc ? "1" : "0";
  a.meta["has_reference"] = ck.reference ? "1" : "0";
  a.meta["n_best"] = std::to_string(ck.best_params.size());
  KeyValues kv;
  store_fields(kv, "model", model.config());
  store_fields(kv, "priors", model.priors());
  store_fields(kv, "train", ck.train);
  for (auto& [k, v] : kv) a.meta[k] = v;

  const auto params = model.parameters();
  store_params(a, "fhvae/", params);
  store_adam(a, "adam_fhvae", ck.adam_fhvae, params);
  if (!ck.best_params.empty()) {
    require(ck.best_params.size() == params.size(), "checkpoint: best parameter snapshot does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) a.tensors["best/" + params[i]->name] = ck.best_params[i];
  }
  if (ck.disc) {
    const auto dp = const_cast<Discriminator&>(*ck.disc).parameters();
    store_params(a, "disc/", dp);
    store_adam(a, "adam_disc", ck.adam_disc, dp);
  } else {
    a.meta["adam_disc.step"] = "0";
  }
  if (ck.reference) store_params(a, "ref/", const_cast<Fhvae&>(*ck.reference).parameters());
  return a;
}

Checkpoint from_archive(const TensorArchive& a) {
  KeyValues kv(a.meta.begin(), a.meta.end());
  ModelConfig mc;
  PriorConfig pc;
  Checkpoint ck;
  try {
    load_fields(kv, "model", mc);
    load_fields(kv, "priors", pc);
    load_fields(kv, "train", ck.train);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const std::string& stage = a.get("stage");
  if (stage != "pretrain" && stage != "finetune") throw FormatError("checkpoint has unknown stage '" + stage + "'");
  ck.stage = stage == "pretrain" ? Stage::kPretrain : Stage::kFinetune;
  ck.epoch = meta_int(a, "epoch");
  ck.global_step = std::stol(a.get("global_step"));
  ck.best_val = parse_double_strict(a.get("best_val"), "best_val");
  ck.bad_epochs = meta_int(a, "bad_epochs");
  ck.finished = a.get("finished") == "1";
  ck.norm_stats_path = a.get("norm_stats_path");

  ck.model = Fhvae(mc, pc, 0);
  const auto params = ck.model.parameters();
  restore_params(a, "fhvae/", params);
  ck.adam_fhvae = restore_adam(a, "adam_fhvae", params);
  const int n_best = meta_int(a, "n_best");
  if (n_best > 0) {
    for (const auto* p : params) ck.best_params.push_back(a.tensor("best/" + p->name));
  }
  if (a.get("has_disc") == "1") {
    ck.disc = Discriminator(mc, 0);
    const auto dp = ck.disc->parameters();
    restore_params(a, "disc/", dp);
    ck.adam_disc = restore_adam(a, "adam_disc", dp);
  }
  if (a.get("has_reference") == "1") {
    ck.reference = Fhvae(mc, pc, 0);
    restore_params(a, "ref/", ck.reference->parameters());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) { save_archive(path, to_archive(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) { return from_archive(load_archive(path)); }

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct StepContext {
  Checkpoint& ck;
  const TrainCorpus& corpus;
  const TrainHooks& hooks;
  Adam* opt_fhvae = nullptr;  // null: evaluation only
  Adam* opt_disc = nullptr;
};

[[noreturn]] void nonfinite(const StepContext& ctx, const Mat& packed, const std::vector<std::string>& ids,
                            const LossReport& rep) {
  std::string where;
  if (ctx.hooks.dump_dir) {
    fs::create_directories(*ctx.hooks.dump_dir);
    write_feature_file(*ctx.hooks.dump_dir / "nonfinite_batch.fhvf", packed);
    std::ofstream out(*ctx.hooks.dump_dir / "nonfinite_batch.txt");
    out << rep.format(ctx.ck.global_step, ctx.ck.epoch + 1) << "\n";
    for (const auto& id : ids) out << id << "\n";
    where = "; batch dumped to " + ctx.hooks.dump_dir->string();
  }
  std::string first = ids.empty() ? "" : " (first segment " + ids.front() + ")";
  throw NumericalError("non-finite loss at step " + std::to_string(ctx.ck.global_step) + first + where);
}

bool finite_report(const LossReport& r) {
  return std::isfinite(r.lb_loss) && std::isfinite(r.z2_disc_loss) && std::isfinite(r.gen_loss) &&
         std::isfinite(r.ref_loss) && std::isfinite(r.dstg_loss) && std::isfinite(r.total) && std::isfinite(r.disc_loss);
}

void check_unchanged(std::uint64_t before, const std::vector<ad::Parameter*>& params, const char* what) {
  if (parameter_hash(params) != before) throw std::logic_error(std::string("gradient isolation violated: ") + what);
}

/// One batch: optional discriminator update(s) then the FHVAE update, or
/// just the objective when no optimizers are given.
LossReport run_batch(StepContext& ctx, const SequenceCache& cache, const Batch& batch, Rng& noise) {
  Checkpoint& ck = ctx.ck;
  Fhvae& model = ck.model;
  const ModelConfig& mc = model.config();
  const PriorConfig& priors = model.priors();
  const TrainingConfig& cfg = ck.train;
  const LossFlags& flags = cfg.flags;
  const bool train = ctx.opt_fhvae != nullptr;
  const int B = static_cast<int>(batch.size());

  std::vector<const Mat*> segs;
  std::vector<int> labels, own;
  std::vector<std::string> ids;
  Mat mu2_rows(B, mc.z2_dim);
  Vec counts(B);
  for (int i = 0; i < B; ++i) {
    const auto& item = batch[static_cast<std::size_t>(i)];
    const auto& seq = ctx.corpus.sequences[cache.sequences[item.slot]];
    segs.push_back(&seq.segments[item.segment]);
    labels.push_back(label_of(seq.domain));
    own.push_back(item.slot);
    mu2_rows.row(i) = cache.mu2.row(item.slot);
    counts(i) = cache.n_segments[item.slot];
    ids.push_back(seq.utterance_id + "#" + std::to_string(item.segment));
  }
  const Mat packed = pack_segments(std::span<const Mat* const>(segs));
  Mat eps2(B, mc.z2_dim), eps1(B, mc.z1_dim);
  for (int i = 0; i < B; ++i) {
    for (int d = 0; d < mc.z2_dim; ++d) eps2(i, d) = noise.normal();
    for (int d = 0; d < mc.z1_dim; ++d) eps1(i, d) = noise.normal();
  }

  ad::Graph g;
  const nn::Binder bind(g, train);
  const ad::Var x = g.constant(packed);
  const GaussVars q2 = model.encode_z2(bind, x, B);
  const ad::Var z2 = reparam_sample(q2, eps2);
  const GaussVars q1 = model.encode_z1(bind, x, z2, B);
  const ad::Var z1 = reparam_sample(q1, eps1);
  const GaussVars recon = model.decode(bind, z1, z2, B);

  const ad::Var lb = ad::mean(graph::lower_bound(x, recon, q1, q2, mu2_rows, counts, priors, mc.seg_len, B));
  const ad::Var z2d = ad::mean(graph::z2_disc(z2, cache.mu2, own, priors));
  ad::Var total = ad::add(lb, ad::scale(z2d, cfg.weights.z2_disc));

  LossComponents comp;
  double disc_value = 0.0;
  const std::uint64_t clamps_before = prob_clamp_events();
  const auto fhvae_params = model.parameters();

  if (flags.adversarial) {
    require(ck.disc.has_value(), "adversarial training requires a discriminator");
    Discriminator& disc = *ck.disc;
    const auto disc_params = disc.parameters();
    const Mat mu1 = q1.mean.value();
    for (int s = 0; s < (train ? cfg.n_disc_steps : 1); ++s) {
      ad::Graph gd;
      const nn::Binder bd(gd, train);
      const ad::Var ld = graph::disc_loss(disc.probability(bd, gd.constant(mu1)), labels);
      if (s == 0) disc_value = ld.scalar();
      if (!train) break;
      const std::uint64_t before = cfg.check_isolation ? parameter_hash(fhvae_params) : 0;
      for (auto* p : disc_params) p->zero_grad();
      gd.backward(ld);
      ctx.opt_disc->step(disc_params);
      if (cfg.check_isolation) check_unchanged(before, fhvae_params, "discriminator update changed FHVAE parameters");
    }
    const nn::Binder frozen(g, false);
    const GenMode mode = flags.gen_dys_only ? GenMode::kDysOnly : GenMode::kBoth;
    const ad::Var gl = graph::gen_loss(disc.probability(frozen, q1.mean), labels, mode);
    comp.gen = gl.scalar();
    total = ad::add(total, ad::scale(gl, cfg.weights.gen));
  }
  if (flags.reference) {
    require(ck.reference.has_value(), "reference loss requires a frozen reference model");
    ad::Graph gr;
    const nn::Binder br(gr, false);
    const ad::Var rx = gr.constant(packed);
    const GaussVars r2 = ck.reference->encode_z2(br, rx, B);
    const GaussVars r1 = ck.reference->encode_z1(br, rx, r2.mean, B);
    const ad::Var rl = graph::reference_loss(q1, r1.mean.value(), r1.logvar.value(), labels, flags.reference_reverse_kl);
    comp.ref = rl.scalar();
    total = ad::add(total, ad::scale(rl, cfg.weights.ref));
  }
  if (flags.disentangle && B >= 3) {
    const ad::Var dl = graph::disentangle_loss(q1.mean, q2.mean);
    comp.dstg = dl.scalar();
    total = ad::add(total, ad::scale(dl, cfg.weights.dstg));
  }
  comp.lb = lb.scalar();
  comp.z2_disc = z2d.scalar();

  LossReport rep = total_fhvae_loss(comp, cfg.weights, flags);
  rep.disc_loss = disc_value;
  rep.clamp_events = prob_clamp_events() - clamps_before;
  if (!finite_report(rep) || !std::isfinite(total.scalar())) nonfinite(ctx, packed, ids, rep);

  if (train) {
    std::uint64_t disc_before = 0;
    if (cfg.check_isolation && ck.disc) disc_before = parameter_hash(ck.disc->parameters());
    for (auto* p : fhvae_params) p->zero_grad();
    g.backward(total);
    ctx.opt_fhvae->step(fhvae_params);
    if (cfg.check_isolation && ck.disc)
      check_unchanged(disc_before, ck.disc->parameters(), "FHVAE update changed discriminator parameters");
  }
  return rep;
}

struct Totals {
  double total = 0.0, lb = 0.0, disc = 0.0, ref = 0.0;
  double weight = 0.0;

  void add(const LossReport& r, double w) {
    total += w * r.total;
    lb += w * r.lb_loss;
    disc += w * r.disc_loss;
    ref += w * r.ref_loss;
    weight += w;
  }
};

void write_line(const TrainHooks& hooks, const std::string& line) {
  if (hooks.metrics) *hooks.metrics << line << '\n';
}

std::vector<Mat> snapshot(const std::vector<ad::Parameter*>& params) {
  std::vector<Mat> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

bool uses_early_stopping(const Checkpoint& ck) { return !(ck.stage == Stage::kFinetune && ck.train.flags.adversarial); }

TrainResult run_training(Checkpoint ck, const TrainCorpus& corpus, const TrainHooks& hooks) {
  const TrainingConfig& cfg = ck.train;
  require(!corpus.sequences.empty(), "training corpus has no sequences");
  if (corpus.feat_dim != ck.model.config().feat_dim)
    throw ConfigError("corpus feature dimension " + std::to_string(corpus.feat_dim) +
                      " does not match the model's feat_dim " + std::to_string(ck.model.config().feat_dim));
  const std::vector<int> val = validation_split(corpus, cfg.validation_fraction, cfg.seed);
  std::vector<int> pool;
  {
    std::set<int> held(val.begin(), val.end());
    for (int i = 0; i < static_cast<int>(corpus.sequences.size()); ++i)
      if (!held.contains(i)) pool.push_back(i);
  }
  if (ck.train.flags.adversarial) {
    bool ctrl = false, dys = false;
    for (int i : pool) (corpus.sequences[i].domain == Domain::kControl ? ctrl : dys) = true;
    if (!(ctrl && dys)) throw ConfigError("adversarial training needs both control and dysarthric training data");
  }
  const bool early = uses_early_stopping(ck);
  Adam opt_f(cfg.lr_fhvae), opt_d(cfg.lr_disc);
  opt_f.state() = ck.adam_fhvae;
  opt_d.state() = ck.adam_disc;
  if (hooks.checkpoint_dir) fs::create_directories(*hooks.checkpoint_dir);

  TrainResult result;
  int epochs_this_call = 0;
  while (!ck.finished && ck.epoch < cfg.max_epochs) {
    const int epoch = ck.epoch;
    HierarchicalSampler sampler(corpus, pool, cfg.hier_sample_size, cfg.batch_size,
                                derive_seed(cfg.seed, Stream::kCache, static_cast<std::uint64_t>(epoch)));
    StepContext ctx{ck, corpus, hooks, &opt_f, ck.disc ? &opt_d : nullptr};
    Totals tot;
    while (sampler.next_cache(ck.model)) {
      SequenceCache& cache = sampler.cache();
      for (const Batch& batch : sampler.batches()) {
        if (cfg.refresh_mu2_per_step) {
          std::vector<int> slots;
          for (const auto& item : batch) slots.push_back(item.slot);
          std::sort(slots.begin(), slots.end());
          slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
          std::vector<int> seqs;
          for (int s : slots) seqs.push_back(cache.sequences[s]);
          const Mat fresh = compute_seq_means(ck.model, corpus, seqs);
          for (std::size_t k = 0; k < slots.size(); ++k) cache.mu2.row(slots[k]) = fresh.row(static_cast<Eigen::Index>(k));
        }
        Rng noise(derive_seed(cfg.seed, Stream::kNoise, static_cast<std::uint64_t>(ck.global_step)));
        const LossReport rep = run_batch(ctx, cache, batch, noise);
        ++ck.global_step;
        tot.add(rep, static_cast<double>(batch.size()));
        if (cfg.log_steps) write_line(hooks, rep.format(ck.global_step, epoch + 1));
      }
    }
    EpochSummary sum;
    sum.epoch = epoch + 1;
    sum.train_total = tot.total / tot.weight;
    sum.train_lb = tot.lb / tot.weight;
    sum.disc_loss = tot.disc / tot.weight;
    sum.ref_loss = tot.ref / tot.weight;
    sum.val_total = val.empty() ? sum.train_total : validation_loss(ck, corpus, val);
    ck.epoch = epoch + 1;
    ck.adam_fhvae = opt_f.state();
    ck.adam_disc = opt_d.state();

    bool improved = false;
    if (sum.val_total < ck.best_val) {
      ck.best_val = sum.val_total;
      improved = true;
    }
    if (early) {
      if (improved) {
        ck.bad_epochs = 0;
        ck.best_params = snapshot(ck.model.parameters());
      } else if (++ck.bad_epochs >= std::max(1, cfg.patience)) {
        ck.finished = true;
      }
    }
    if (ck.epoch >= cfg.max_epochs) ck.finished = true;

    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "epoch=%d train_total=%.17g train_lb=%.17g val_total=%.17g best_val=%.17g bad_epochs=%d disc=%.17g "
                  "ref=%.17g",
                  sum.epoch, sum.train_total, sum.train_lb, sum.val_total, ck.best_val, ck.bad_epochs, sum.disc_loss,
                  sum.ref_loss);
    write_line(hooks, buf);
    result.history.push_back(sum);
    if (hooks.checkpoint_dir) {
      save_checkpoint(ck, *hooks.checkpoint_dir / "latest.ckpt");
      if (improved) save_checkpoint(ck, *hooks.checkpoint_dir / "best.ckpt");
    }
    if (hooks.stop_after_epochs && ++epochs_this_call >= *hooks.stop_after_epochs) break;
  }
  if (ck.finished && early && !ck.best_params.empty()) {
    const auto params = ck.model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = ck.best_params[i];
  }
  if (hooks.metrics) hooks.metrics->flush();
  result.ckpt = std::move(ck);
  return result;
}

}  // namespace

double validation_loss(Checkpoint& ck, const TrainCorpus& corpus, const std::vector<int>& sequences) {
  require(!sequences.empty(), "validation_loss: no sequences");
  const TrainingConfig& cfg = ck.train;
  const TrainHooks no_hooks;
  StepContext ctx{ck, corpus, no_hooks, nullptr, nullptr};
  double sum = 0.0, weight = 0.0;
  std::uint64_t counter = 0;
  const std::size_t K = static_cast<std::size_t>(cfg.hier_sample_size);
  for (std::size_t start = 0; start < sequences.size(); start += K) {
    SequenceCache cache;
    cache.sequences.assign(sequences.begin() + static_cast<std::ptrdiff_t>(start),
                           sequences.begin() + static_cast<std::ptrdiff_t>(std::min(sequences.size(), start + K)));
    std::vector<BatchItem> items;
    for (std::size_t slot = 0; slot < cache.sequences.size(); ++slot) {
      const int n = static_cast<int>(corpus.sequences[cache.sequences[slot]].segments.size());
      cache.n_segments.push_back(n);
      for (int s = 0; s < n; ++s) items.push_back({static_cast<int>(slot), s});
    }
    cache.mu2 = compute_seq_means(ck.model, corpus, cache.sequences);
    for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(items.size(), i + static_cast<std::size_t>(cfg.batch_size));
      const Batch batch(items.begin() + static_cast<std::ptrdiff_t>(i), items.begin() + static_cast<std::ptrdiff_t>(end));
      Rng noise(derive_seed(cfg.seed, Stream::kValidation, counter++));
      const LossReport rep = run_batch(ctx, cache, batch, noise);
      sum += rep.total * static_cast<double>(batch.size());
      weight += static_cast<double>(batch.size());
    }
  }
  return sum / weight;
}

TrainResult pretrain(const TrainCorpus& corpus, const ModelConfig& model_cfg, const PriorConfig& priors,
                     const TrainingConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (!corpus.has_domain(Domain::kControl)) throw ContractError("pretraining requires control-domain data");
  Checkpoint ck;
  ck.stage = Stage::kPretrain;
  ck.train = cfg;
  const LossFlags& f = cfg.flags;
  if (f.adversarial || f.reference || f.gen_dys_only || f.disentangle)
    warn("pretraining ignores the adversarial, reference, gen_dys_only and disentangle flags");
  ck.train.flags = LossFlags{};
  ck.model = Fhvae(model_cfg, priors, cfg.seed);
  return run_training(std::move(ck), corpus, hooks);
}

TrainResult finetune(const Checkpoint& pretrained, const TrainCorpus& corpus, const TrainingConfig& cfg,
                     const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.flags.adversarial && !(corpus.has_domain(Domain::kControl) && corpus.has_domain(Domain::kDysarthric)))
    throw ConfigError("adversarial finetuning needs a corpus with both control and dysarthric data");
  if (cfg.flags.gen_dys_only && !cfg.flags.adversarial) warn("gen_dys_only has no effect without adversarial training");
  Checkpoint ck;
  ck.stage = Stage::kFinetune;
  ck.train = cfg;
  ck.model = pretrained.model;
  ck.norm_stats_path = pretrained.norm_stats_path;
  if (cfg.flags.adversarial) {
    if (cfg.warm_start_disc && pretrained.disc)
      ck.disc = pretrained.disc;
    else
      ck.disc = Discriminator(ck.model.config(), derive_seed(cfg.seed, Stream::kDiscInit));
  }
  if (cfg.flags.reference) {
    if (pretrained.stage == Stage::kFinetune && pretrained.reference)
      ck.reference = pretrained.reference;
    else
      ck.reference = pretrained.model;
  }
  return run_training(std::move(ck), corpus, hooks);
}

TrainResult resume(const Checkpoint& ckpt, const TrainCorpus& corpus, const TrainHooks& hooks) {
  ckpt.train.validate();
  return run_training(ckpt, corpus, hooks);
}

}  // namespace fhvae
