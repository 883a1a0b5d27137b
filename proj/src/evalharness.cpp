#include "fhvae/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "fhvae/trainer.hpp"

namespace fhvae {

Protocol protocol_from_string(const std::string& s) {
  if (s == "ood") return Protocol::kOutOfDomain;
  if (s == "indomain") return Protocol::kInDomain;
  if (s == "kfold") return Protocol::kKfold;
  throw ConfigError("unknown protocol '" + s + "' (expected ood, indomain or kfold)");
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kOutOfDomain: return "ood";
    case Protocol::kInDomain: return "indomain";
    case Protocol::kKfold: return "kfold";
  }
  return "?";
}

InputKind input_kind_from_string(const std::string& s) {
  if (s == "fbank") return InputKind::kFbank;
  if (s == "z1") return InputKind::kZ1;
  if (s == "z2") return InputKind::kZ2;
  if (s == "z12") return InputKind::kZ12;
  throw ConfigError("unknown input '" + s + "' (expected fbank, z1, z2 or z12)");
}

std::string to_string(InputKind k) {
  switch (k) {
    case InputKind::kFbank: return "fbank";
    case InputKind::kZ1: return "z1";
    case InputKind::kZ2: return "z2";
    case InputKind::kZ12: return "z12";
  }
  return "?";
}

void SplitSpec::validate() const {
  if (!(threshold > 0.0 && threshold < 100.0)) throw ConfigError("split threshold must lie in (0, 100)");
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
}

SpeakerSplit split_out_of_domain(std::span<const SpeakerMeta> speakers, double threshold) {
  SpeakerSplit out;
  for (const auto& s : speakers) {
    if (!s.intelligibility) throw ContractError("split_out_of_domain: speaker " + s.speaker_id + " has no intelligibility");
    (*s.intelligibility >= threshold ? out.train : out.test).push_back(s.speaker_id);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", threshold);
  if (out.train.empty()) throw ConfigError(std::string("out-of-domain split at threshold ") + buf + " leaves no training speakers");
  if (out.test.empty()) throw ConfigError(std::string("out-of-domain split at threshold ") + buf + " leaves no test speakers");
  return out;
}

SpeakerSplit split_in_domain(std::span<const SpeakerMeta> speakers) {
  std::vector<const SpeakerMeta*> ranked;
  for (const auto& s : speakers) {
    if (!s.intelligibility) throw ContractError("split_in_domain: speaker " + s.speaker_id + " has no intelligibility");
    ranked.push_back(&s);
  }
  std::sort(ranked.begin(), ranked.end(), [](const SpeakerMeta* a, const SpeakerMeta* b) {
    if (*a->intelligibility != *b->intelligibility) return *a->intelligibility > *b->intelligibility;
    return a->speaker_id < b->speaker_id;
  });
  SpeakerSplit out;
  for (std::size_t r = 0; r < ranked.size(); ++r) (r % 2 == 0 ? out.train : out.test).push_back(ranked[r]->speaker_id);
  if (out.test.empty()) warn("in-domain split has no test speakers");
  return out;
}

KfoldPlan kfold_blocks(std::span<const UttRef> utts, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  std::map<std::string, int> count;
  std::map<std::string, Domain> domain;
  for (const auto& u : utts) {
    auto [it, fresh] = domain.emplace(u.speaker_id, u.domain);
    if (!fresh && it->second != u.domain) throw ContractError("speaker " + u.speaker_id + " appears in both domains");
    ++count[u.speaker_id];
  }
  KfoldPlan plan;
  plan.blocks.resize(static_cast<std::size_t>(n_folds));
  std::map<std::string, int> block_of_speaker;
  Rng rng(derive_seed(seed, Stream::kFolds));
  for (Domain d : {Domain::kControl, Domain::kDysarthric}) {
    std::vector<std::string> spk;
    for (const auto& [id, dom] : domain)
      if (dom == d) spk.push_back(id);
    if (spk.empty()) throw ContractError("kfold_blocks needs utterances from both domains");
    if (static_cast<int>(spk.size()) < n_folds)
      throw ConfigError("kfold_blocks: " + std::to_string(spk.size()) + " " +
                        (d == Domain::kControl ? "control" : "dysarthric") + " speakers cannot fill " +
                        std::to_string(n_folds) + " folds");
    rng.shuffle(spk);
    std::stable_sort(spk.begin(), spk.end(), [&](const auto& a, const auto& b) { return count[a] > count[b]; });
    std::vector<int> load(static_cast<std::size_t>(n_folds), 0), members(static_cast<std::size_t>(n_folds), 0);
    for (const auto& id : spk) {
      int best = 0;
      for (int b = 1; b < n_folds; ++b) {
        if (load[b] < load[best] || (load[b] == load[best] && members[b] < members[best])) best = b;
      }
      load[best] += count[id];
      ++members[best];
      block_of_speaker[id] = best;
      plan.blocks[best].push_back(id);
    }
  }
  for (auto& b : plan.blocks) std::sort(b.begin(), b.end());
  for (const auto& u : utts) plan.block_of_utt.push_back(block_of_speaker.at(u.speaker_id));
  for (int f = 0; f < n_folds; ++f) {
    Fold fold;
    const int val_block = (f + 1) % n_folds;
    for (int i = 0; i < static_cast<int>(utts.size()); ++i) {
      const int b = plan.block_of_utt[i];
      (b == f ? fold.test : b == val_block ? fold.val : fold.train).push_back(i);
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Probe
// ---------------------------------------------------------------------------

Mat Probe::forward_logits(const Mat& x) {
  ad::Graph g;
  const nn::Binder bind(g, false);
  const ad::Var h = ad::relu(hidden_(bind, g.constant(normalize(x, stats_))));
  return out_(bind, h).value();
}

std::vector<int> Probe::predict(const Mat& x) {
  const Mat logits = forward_logits(x);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index k = 0;
    logits.row(r).maxCoeff(&k);
    out[static_cast<std::size_t>(r)] = static_cast<int>(k);
  }
  return out;
}

double Probe::accuracy(const Mat& x, const std::vector<int>& y) {
  require(static_cast<Eigen::Index>(y.size()) == x.rows(), "probe accuracy: one label per row");
  if (y.empty()) return 0.0;
  const auto pred = predict(x);
  int correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

Probe train_probe(const Mat& x, const std::vector<int>& y, int n_classes, const ProbeConfig& cfg, const Mat* x_val,
                  const std::vector<int>* y_val) {
  require(static_cast<Eigen::Index>(y.size()) == x.rows() && !y.empty(), "train_probe: one label per row required");
  require(n_classes >= 2, "train_probe: at least two classes");
  std::set<int> present(y.begin(), y.end());
  if (present.size() < 2) throw ContractError("train_probe: training labels contain a single class");
  for (int v : present) require(v >= 0 && v < n_classes, "train_probe: label out of range");

  Probe probe;
  const FeatureMatrix xs[] = {x};
  probe.stats_ = fit_norm_stats(xs);
  Rng rng(derive_seed(cfg.seed, Stream::kProbe));
  probe.hidden_ = nn::Dense("probe/hidden", static_cast<int>(x.cols()), cfg.hidden, rng);
  probe.out_ = nn::Dense("probe/out", cfg.hidden, n_classes, rng);
  std::vector<ad::Parameter*> params;
  probe.hidden_.collect(params);
  probe.out_.collect(params);
  Adam opt(cfg.lr);
  const Mat xn = normalize(x, probe.stats_);
  std::vector<int> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  const bool use_val = x_val && y_val && !y_val->empty();
  double best_acc = -1.0;
  std::vector<Mat> best;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Mat xb(static_cast<Eigen::Index>(end - start), x.cols());
      std::vector<int> yb;
      for (std::size_t i = start; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) = xn.row(order[i]);
        yb.push_back(y[static_cast<std::size_t>(order[i])]);
      }
      ad::Graph g;
      const nn::Binder bind(g, true);
      const ad::Var logits = probe.out_(bind, ad::relu(probe.hidden_(bind, g.constant(xb))));
      const ad::Var loss = ad::neg(ad::mean(ad::pick(ad::log_softmax_rows(logits), yb)));
      for (auto* p : params) p->zero_grad();
      g.backward(loss);
      opt.step(params);
    }
    if (use_val) {
      const double acc = probe.accuracy(*x_val, *y_val);
      if (acc > best_acc) {
        best_acc = acc;
        best.clear();
        for (const auto* p : params) best.push_back(p->value);
      }
    }
  }
  if (use_val && !best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return probe;
}

// ---------------------------------------------------------------------------
// Intent model
// ---------------------------------------------------------------------------

namespace {

Mat strided(const Mat& m, int stride) {
  if (stride <= 1) return m;
  const Eigen::Index n = (m.rows() + stride - 1) / stride;
  Mat out(n, m.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = m.row(i * stride);
  return out;
}

Mat pack_sequences(const std::vector<const Mat*>& batch, int steps) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  Mat out(steps * B, batch.front()->cols());
  for (Eigen::Index b = 0; b < B; ++b)
    for (int t = 0; t < steps; ++t) out.row(t * B + b) = batch[static_cast<std::size_t>(b)]->row(t);
  return out;
}

}  // namespace

Mat IntentModel::probabilities(const std::vector<const Mat*>& batch, int steps) {
  ad::Graph g;
  const nn::Binder bind(g, false);
  const int B = static_cast<int>(batch.size());
  const ad::Var h = rnn_(bind, g.constant(pack_sequences(batch, steps)), steps, B, false);
  return ad::sigmoid(out_(bind, ad::time_mean(h, steps, B))).value();
}

std::vector<LabelSet> IntentModel::predict(const std::vector<Mat>& sequences) {
  std::vector<LabelSet> out(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const Mat s = normalize(strided(sequences[i], cfg_.stride), stats_);
    const Mat p = probabilities({&s}, static_cast<int>(s.rows()));
    for (Eigen::Index k = 0; k < p.cols(); ++k)
      if (p(0, k) > cfg_.threshold) out[i].push_back(static_cast<int>(k));
  }
  return out;
}

IntentModel train_intent_model(const std::vector<Mat>& sequences, const std::vector<LabelSet>& labels, int n_labels,
                               const IntentConfig& cfg) {
  if (n_labels < 1) throw ConfigError("intent model needs a non-empty label universe");
  require(sequences.size() == labels.size() && !sequences.empty(), "train_intent_model: one label set per sequence");
  require(cfg.stride >= 1 && cfg.batch_size >= 1 && cfg.epochs >= 0, "train_intent_model: invalid configuration");
  IntentModel model;
  model.cfg_ = cfg;
  std::vector<Mat> data;
  for (const auto& s : sequences) {
    require(s.rows() >= 1, "train_intent_model: empty sequence");
    data.push_back(strided(s, cfg.stride));
  }
  model.stats_ = fit_norm_stats(data);
  for (auto& s : data) s = normalize(s, model.stats_);
  const int D = static_cast<int>(data.front().cols());
  Rng rng(derive_seed(cfg.seed, Stream::kIntent));
  model.rnn_ = nn::LstmWeights("intent/lstm", D, cfg.hidden, rng);
  model.out_ = nn::Dense("intent/out", cfg.hidden, n_labels, rng);
  std::vector<ad::Parameter*> params;
  model.rnn_.collect(params);
  model.out_.collect(params);
  Adam opt(cfg.lr);

  Mat targets = Mat::Zero(static_cast<Eigen::Index>(labels.size()), n_labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (int l : labels[i]) {
      require(l >= 0 && l < n_labels, "train_intent_model: label out of range");
      targets(static_cast<Eigen::Index>(i), l) = 1.0;
    }
  }
  // Batches only combine sequences of equal length.
  std::map<Eigen::Index, std::vector<int>> buckets;
  for (std::size_t i = 0; i < data.size(); ++i) buckets[data[i].rows()].push_back(static_cast<int>(i));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::vector<int>> batches;
    for (auto& [len, ids] : buckets) {
      rng.shuffle(ids);
      for (std::size_t s = 0; s < ids.size(); s += static_cast<std::size_t>(cfg.batch_size))
        batches.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(s),
                             ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), s + static_cast<std::size_t>(cfg.batch_size))));
    }
    rng.shuffle(batches);
    for (const auto& ids : batches) {
      std::vector<const Mat*> batch;
      Mat sign(static_cast<Eigen::Index>(ids.size()), n_labels);
      for (std::size_t b = 0; b < ids.size(); ++b) {
        batch.push_back(&data[static_cast<std::size_t>(ids[b])]);
        sign.row(static_cast<Eigen::Index>(b)) = 2.0 * targets.row(ids[b]).array() - 1.0;
      }
      const int steps = static_cast<int>(batch.front()->rows());
      const int B = static_cast<int>(batch.size());
      ad::Graph g;
      const nn::Binder bind(g, true);
      const ad::Var h = model.rnn_(bind, g.constant(pack_sequences(batch, steps)), steps, B, false);
      const ad::Var logits = model.out_(bind, ad::time_mean(h, steps, B));
      // -log sigmoid(sign * logit) is the binary cross-entropy of each label.
      const ad::Var p = ad::clamp(ad::sigmoid(ad::mul(logits, g.constant(sign))), 1e-12, 1.0);
      const ad::Var loss = ad::neg(ad::mean(ad::log(p)));
      for (auto* q : params) q->zero_grad();
      g.backward(loss);
      opt.step(params);
    }
  }
  return model;
}

double micro_f1(const std::vector<LabelSet>& predicted, const std::vector<LabelSet>& truth) {
  require(predicted.size() == truth.size(), "micro_f1: prediction and truth lists differ in length");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::set<int> p(predicted[i].begin(), predicted[i].end());
    const std::set<int> t(truth[i].begin(), truth[i].end());
    for (int l : p) (t.contains(l) ? tp : fp) += 1;
    for (int l : t) fn += !p.contains(l);
  }
  const long denom = 2 * tp + fp + fn;
  if (denom == 0) {
    warn("micro_f1: no labels predicted or expected; score defined as 0");
    return 0.0;
  }
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

Domain EvalData::domain_of(std::size_t i) const {
  auto it = speakers.find(speaker_ids[i]);
  require(it != speakers.end(), "eval data: unknown speaker " + speaker_ids[i]);
  return it->second.domain;
}

Mat pool_rows(const std::vector<Mat>& sequences) {
  require(!sequences.empty(), "pool_rows: no sequences");
  Mat out(static_cast<Eigen::Index>(sequences.size()), sequences.front().cols());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    require(sequences[i].rows() >= 1, "pool_rows: empty sequence");
    out.row(static_cast<Eigen::Index>(i)) = sequences[i].colwise().mean();
  }
  return out;
}

std::vector<Mat> concat_inputs(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  require(a.size() == b.size(), "concat_inputs: sequence lists differ in length");
  std::vector<Mat> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].rows() == b[i].rows(), "concat_inputs: sequences differ in length");
    Mat m(a[i].rows(), a[i].cols() + b[i].cols());
    m << a[i], b[i];
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Mat> EvalData::sequences(InputKind kind) const {
  if (auto it = inputs.find(kind); it != inputs.end()) return it->second;
  if (kind == InputKind::kZ12) {
    auto a = inputs.find(InputKind::kZ1), b = inputs.find(InputKind::kZ2);
    if (a != inputs.end() && b != inputs.end()) return concat_inputs(a->second, b->second);
  }
  throw ConfigError("evaluation input '" + to_string(kind) + "' is not available");
}

namespace {

std::vector<SpeakerMeta> speakers_present(const EvalData& data) {
  std::set<std::string> ids(data.speaker_ids.begin(), data.speaker_ids.end());
  std::vector<SpeakerMeta> out;
  for (const auto& id : ids) out.push_back(data.speakers.at(id));
  return out;
}

void assert_disjoint(const std::vector<int>& a, const std::vector<int>& b, const EvalData& data) {
  std::set<std::string> sa;
  for (int i : a) sa.insert(data.speaker_ids[static_cast<std::size_t>(i)]);
  for (int i : b)
    if (sa.contains(data.speaker_ids[static_cast<std::size_t>(i)]))
      throw std::logic_error("evaluation split is not speaker-disjoint");
}

}  // namespace

EvalReport run_eval_suite(const EvalData& data, InputKind input, const SplitSpec& spec, const EvalOptions& opts) {
  spec.validate();
  require(data.size() > 0, "run_eval_suite: no utterances");
  require(data.labels.size() == data.size() && data.speaker_ids.size() == data.size(),
          "run_eval_suite: inconsistent evaluation data");
  const std::vector<Mat> seqs = data.sequences(input);
  require(seqs.size() == data.size(), "run_eval_suite: one input sequence per utterance");

  EvalReport rep;
  rep.protocol = spec.mode;
  rep.input = input;
  std::map<std::string, double> spk_sum;
  std::map<std::string, int> spk_n;

  if (spec.mode == Protocol::kKfold) {
    const Mat pooled = pool_rows(seqs);
    std::vector<UttRef> refs;
    std::vector<int> y;
    for (std::size_t i = 0; i < data.size(); ++i) {
      refs.push_back({data.speaker_ids[i], data.domain_of(i)});
      y.push_back(label_of(data.domain_of(i)));
    }
    for (int r = 0; r < spec.repeats; ++r) {
      const KfoldPlan plan = kfold_blocks(refs, spec.n_folds, static_cast<std::uint64_t>(r));
      int correct = 0, total = 0;
      std::map<std::string, std::pair<int, int>> per_spk;
      for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const Fold& fold = plan.folds[f];
        assert_disjoint(fold.train, fold.test, data);
        auto gather = [&](const std::vector<int>& idx, Mat& xm, std::vector<int>& ym) {
          xm.resize(static_cast<Eigen::Index>(idx.size()), pooled.cols());
          ym.clear();
          for (std::size_t k = 0; k < idx.size(); ++k) {
            xm.row(static_cast<Eigen::Index>(k)) = pooled.row(idx[k]);
            ym.push_back(y[static_cast<std::size_t>(idx[k])]);
          }
        };
        Mat xtr, xva, xte;
        std::vector<int> ytr, yva, yte;
        gather(fold.train, xtr, ytr);
        gather(fold.val, xva, yva);
        gather(fold.test, xte, yte);
        ProbeConfig pc = opts.probe;
        pc.seed = derive_seed(static_cast<std::uint64_t>(r), Stream::kProbe, f);
        Probe probe = train_probe(xtr, ytr, 2, pc, &xva, &yva);
        const auto pred = probe.predict(xte);
        for (std::size_t k = 0; k < yte.size(); ++k) {
          const bool ok = pred[k] == yte[k];
          correct += ok;
          auto& cell = per_spk[data.speaker_ids[static_cast<std::size_t>(fold.test[k])]];
          cell.first += ok;
          cell.second += 1;
        }
        total += static_cast<int>(yte.size());
      }
      rep.scores.push_back(static_cast<double>(correct) / total);
      for (const auto& [id, c] : per_spk) {
        spk_sum[id] += static_cast<double>(c.first) / c.second;
        spk_n[id] += 1;
      }
    }
  } else {
    const auto spk = speakers_present(data);
    const SpeakerSplit split =
        spec.mode == Protocol::kOutOfDomain ? split_out_of_domain(spk, spec.threshold) : split_in_domain(spk);
    if (split.test.empty()) throw ConfigError("evaluation split has no test speakers");
    const std::set<std::string> train_spk(split.train.begin(), split.train.end());
    std::vector<int> tr, te;
    for (std::size_t i = 0; i < data.size(); ++i) (train_spk.contains(data.speaker_ids[i]) ? tr : te).push_back(static_cast<int>(i));
    assert_disjoint(tr, te, data);
    std::vector<Mat> xtr, xte;
    std::vector<LabelSet> ytr, yte;
    for (int i : tr) {
      xtr.push_back(seqs[static_cast<std::size_t>(i)]);
      ytr.push_back(data.labels[static_cast<std::size_t>(i)]);
    }
    for (int i : te) {
      xte.push_back(seqs[static_cast<std::size_t>(i)]);
      yte.push_back(data.labels[static_cast<std::size_t>(i)]);
    }
    for (int r = 0; r < spec.repeats; ++r) {
      IntentConfig ic = opts.intent;
      ic.seed = derive_seed(static_cast<std::uint64_t>(r), Stream::kIntent);
      IntentModel model = train_intent_model(xtr, ytr, data.n_labels, ic);
      const auto pred = model.predict(xte);
      rep.scores.push_back(micro_f1(pred, yte));
      std::map<std::string, std::pair<std::vector<LabelSet>, std::vector<LabelSet>>> by_spk;
      for (std::size_t k = 0; k < te.size(); ++k) {
        auto& cell = by_spk[data.speaker_ids[static_cast<std::size_t>(te[k])]];
        cell.first.push_back(pred[k]);
        cell.second.push_back(yte[k]);
      }
      for (const auto& [id, c] : by_spk) {
        spk_sum[id] += micro_f1(c.first, c.second);
        spk_n[id] += 1;
      }
    }
  }
  rep.mean = std::accumulate(rep.scores.begin(), rep.scores.end(), 0.0) / static_cast<double>(rep.scores.size());
  for (const auto& [id, s] : spk_sum) rep.per_speaker[id] = s / spk_n[id];
  return rep;
}

std::string EvalReport::table() const {
  std::ostringstream out;
  char buf[64];
  out << "protocol\tinput\trepeat\tscore\n";
  for (std::size_t r = 0; r < scores.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.6f", scores[r]);
    out << to_string(protocol) << '\t' << to_string(input) << '\t' << r << '\t' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.6f", mean);
  out << to_string(protocol) << '\t' << to_string(input) << "\tmean\t" << buf << '\n';
  for (const auto& [id, s] : per_speaker) {
    std::snprintf(buf, sizeof buf, "%.6f", s);
    out << to_string(protocol) << '\t' << to_string(input) << "\tspeaker:" << id << '\t' << buf << '\n';
  }
  return out.str();
}

std::string EvalReport::summary() const {
  char buf[160];
  const char* metric = protocol == Protocol::kKfold ? "probe accuracy" : "intent micro-F1";
  std::snprintf(buf, sizeof buf, "%s on %s (%s protocol): mean %.4f over %zu repeat(s)", metric,
                to_string(input).c_str(), to_string(protocol).c_str(), mean, scores.size());
  return buf;
}

}  // namespace fhvae
