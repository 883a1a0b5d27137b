#include "criteria.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "fhvae/evalharness.hpp"
#include "fhvae/losses.hpp"
#include "fhvae/trainer.hpp"
#include "oracles.hpp"

namespace criteria {

using namespace fhvae;

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Mat randn(Rng& r, Eigen::Index rows, Eigen::Index cols, double s = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = s * r.normal();
  return m;
}

oracle::Row row_of(const Mat& m, Eigen::Index r) {
  oracle::Row out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

oracle::Row vec_of(const Vec& v) { return oracle::Row(v.data(), v.data() + v.size()); }

oracle::Table table_of(const Mat& m) {
  oracle::Table t;
  for (Eigen::Index r = 0; r < m.rows(); ++r) t.push_back(row_of(m, r));
  return t;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct MaxErr {
  double value = 0.0;
  std::string where;
  void add(double got, double want, const std::string& what) {
    const double e = std::abs(got - want);
    if (!(e <= value)) {
      value = std::isfinite(e) ? e : INFINITY;
      where = what;
    }
  }
};

}  // namespace

Outcome loss_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  MaxErr err;
  Rng rng(20240601);
  for (int inst = 0; inst < 20; ++inst) {
    const int d1 = 1 + static_cast<int>(rng.below(4)), d2 = 1 + static_cast<int>(rng.below(4));
    const int D = 1 + static_cast<int>(rng.below(5)), T = 1 + static_cast<int>(rng.below(6));
    PriorConfig pr;
    pr.var_z1 = rng.uniform(0.3, 2.0);
    pr.var_z2 = rng.uniform(0.1, 1.0);
    pr.var_mu2 = rng.uniform(0.5, 2.0);

    // KL between diagonal Gaussians.
    GaussianPosterior q{randn(rng, d1, 1), randn(rng, d1, 1, 0.5)};
    const Vec pm = randn(rng, d1, 1);
    Vec pv(d1);
    for (int i = 0; i < d1; ++i) pv(i) = rng.uniform(0.2, 3.0);
    err.add(kl_diag_gauss(q, pm, pv), oracle::kl_diag(vec_of(q.mean), vec_of(q.logvar), vec_of(pm), vec_of(pv)),
            "kl_diag_gauss");

    // Single-segment lower bound.
    const Mat x = randn(rng, T, D), rm = randn(rng, T, D), rl = randn(rng, T, D, 0.5);
    GaussianPosterior q1{randn(rng, d1, 1), randn(rng, d1, 1, 0.5)};
    GaussianPosterior q2{randn(rng, d2, 1), randn(rng, d2, 1, 0.5)};
    const Vec mu2 = randn(rng, d2, 1);
    const int n_seg = 1 + static_cast<int>(rng.below(9));
    err.add(lower_bound_loss(x, FrameGaussian{rm, rl}, q1, q2, mu2, pr, n_seg),
            oracle::lower_bound(table_of(x), table_of(rm), table_of(rl), vec_of(q1.mean), vec_of(q1.logvar),
                                vec_of(q2.mean), vec_of(q2.logvar), vec_of(mu2), pr.var_z1, pr.var_z2, pr.var_mu2,
                                n_seg),
            "lower_bound_loss");

    // Batched lower bound over B time-major segments.
    {
      const int B = 1 + static_cast<int>(rng.below(4));
      std::vector<Mat> xs, ms, ls;
      for (int b = 0; b < B; ++b) {
        xs.push_back(randn(rng, T, D));
        ms.push_back(randn(rng, T, D));
        ls.push_back(randn(rng, T, D, 0.5));
      }
      auto pack = [](const std::vector<Mat>& v) {
        std::vector<const Mat*> p;
        for (const auto& m : v) p.push_back(&m);
        return pack_segments(std::span<const Mat* const>(p));
      };
      const Mat q1m = randn(rng, B, d1), q1l = randn(rng, B, d1, 0.5), q2m = randn(rng, B, d2),
                q2l = randn(rng, B, d2, 0.5), mu2s = randn(rng, B, d2);
      Vec counts(B);
      for (int b = 0; b < B; ++b) counts(b) = 1 + static_cast<double>(rng.below(7));
      ad::Graph g;
      const ad::Var lb = graph::lower_bound(g.constant(pack(xs)), GaussVars{g.constant(pack(ms)), g.constant(pack(ls))},
                                            GaussVars{g.constant(q1m), g.constant(q1l)},
                                            GaussVars{g.constant(q2m), g.constant(q2l)}, mu2s, counts, pr, T, B);
      for (int b = 0; b < B; ++b)
        err.add(lb.value()(b, 0),
                oracle::lower_bound(table_of(xs[b]), table_of(ms[b]), table_of(ls[b]), row_of(q1m, b), row_of(q1l, b),
                                    row_of(q2m, b), row_of(q2l, b), row_of(mu2s, b), pr.var_z1, pr.var_z2, pr.var_mu2,
                                    static_cast<int>(counts(b))),
                "graph::lower_bound");
    }

    // Sequence-discriminative term.
    {
      const int K = 2 + static_cast<int>(rng.below(6));
      const Mat table = randn(rng, K, d2);
      const Vec z2 = randn(rng, d2, 1);
      const int own = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
      err.add(z2_disc_loss(z2, own, table, pr), oracle::z2_disc(vec_of(z2), own, table_of(table), pr.var_z2),
              "z2_disc_loss");
    }

    // Domain cross-entropies, scalar and batched.
    {
      const double p = rng.uniform(0.01, 0.99);
      const int y = static_cast<int>(rng.below(2));
      err.add(disc_loss(p, y), oracle::disc_loss({p}, {y}), "disc_loss");
      err.add(gen_loss(p, y, GenMode::kBoth), oracle::gen_loss_both({p}, {y}), "gen_loss(both)");
      err.add(gen_loss(p, y, GenMode::kDysOnly), oracle::gen_loss_dys_only({p}, {y}), "gen_loss(dys)");

      const int B = 2 + static_cast<int>(rng.below(7));
      oracle::Row ps;
      std::vector<int> ys;
      Mat pm(B, 1);
      for (int b = 0; b < B; ++b) {
        ps.push_back(rng.uniform(0.01, 0.99));
        ys.push_back(b == 0 ? 0 : b == 1 ? 1 : static_cast<int>(rng.below(2)));
        pm(b, 0) = ps.back();
      }
      ad::Graph g;
      const ad::Var pv2 = g.constant(pm);
      err.add(graph::disc_loss(pv2, ys).scalar(), oracle::disc_loss(ps, ys), "graph::disc_loss");
      err.add(graph::gen_loss(pv2, ys, GenMode::kBoth).scalar(), oracle::gen_loss_both(ps, ys), "graph::gen_loss(both)");
      err.add(graph::gen_loss(pv2, ys, GenMode::kDysOnly).scalar(), oracle::gen_loss_dys_only(ps, ys),
              "graph::gen_loss(dys)");
      const ad::Var rows = graph::bce(pv2, ys);
      for (int b = 0; b < B; ++b) err.add(rows.value()(b, 0), oracle::bce(ps[b], ys[b]), "graph::bce");

      // Reference term.
      const Mat nm = randn(rng, B, d1), nl = randn(rng, B, d1, 0.5), fm = randn(rng, B, d1), fl = randn(rng, B, d1, 0.5);
      for (bool rev : {false, true}) {
        ad::Graph gr;
        const ad::Var v =
            graph::reference_loss(GaussVars{gr.constant(nm), gr.constant(nl)}, fm, fl, ys, rev);
        err.add(v.scalar(), oracle::reference_loss(table_of(nm), table_of(nl), table_of(fm), table_of(fl), ys, rev),
                rev ? "graph::reference_loss(reverse)" : "graph::reference_loss");
        GaussianPosterior now{nm.row(0).transpose(), nl.row(0).transpose()};
        GaussianPosterior frz{fm.row(0).transpose(), fl.row(0).transpose()};
        err.add(reference_loss(now, frz, ys[0], rev),
                oracle::reference_loss({row_of(nm, 0)}, {row_of(nl, 0)}, {row_of(fm, 0)}, {row_of(fl, 0)}, {ys[0]}, rev),
                "reference_loss");
      }
    }

    // Disentanglement term.
    {
      const int B = 3 + static_cast<int>(rng.below(10));
      const Mat a = randn(rng, B, d1), b = randn(rng, B, d2);
      err.add(disentangle_loss(a, b), oracle::disentangle(table_of(a), table_of(b)), "disentangle_loss");
    }

    // Weighted total.
    {
      LossComponents c{rng.uniform(-5, 50), rng.uniform(0, 5), rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 4)};
      LossWeights w{rng.uniform(0, 20), rng.uniform(0, 600), rng.uniform(0, 1), rng.uniform(0, 2)};
      LossFlags f;
      f.adversarial = rng.below(2);
      f.reference = rng.below(2);
      f.disentangle = rng.below(2);
      const double want = c.lb + w.z2_disc * c.z2_disc + (f.adversarial ? w.gen * c.gen : 0.0) +
                          (f.reference ? w.ref * c.ref : 0.0) + (f.disentangle ? w.dstg * c.dstg : 0.0);
      err.add(total_fhvae_loss(c, w, f).total, want, "total_fhvae_loss");
    }
  }

  // Hand values.
  MaxErr hand;
  hand.add(kl_diag_gauss(GaussianPosterior{Vec::Constant(1, 1.0), Vec::Zero(1)}, Vec::Zero(1), Vec::Ones(1)), 0.5,
           "KL(N(1,1)||N(0,1))");
  hand.add(disc_loss(0.5, 1), std::log(2.0), "BCE(0.5)");
  hand.add(disc_loss(0.5, 0), std::log(2.0), "BCE(0.5)");
  {
    Mat a(4, 1), b(4, 1);
    a << 1, 2, 3, 5;
    b << 3, 5, 7, 11;
    hand.add(disentangle_loss(a, b), 1.0, "disentangle(perfect)");
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = err.value <= 1e-6 && hand.value <= 1e-6 && secs < 10.0;
  o.detail = fmt("max oracle error %.3g, max hand-value error %.3g, %.2f s", err.value, hand.value, secs);
  if (err.value > 1e-6) o.detail += " (worst: " + err.where + ")";
  if (hand.value > 1e-6) o.detail += " (hand: " + hand.where + ")";
  return o;
}

Outcome seq_mean_oracle() {
  MaxErr err;
  Rng rng(77);
  for (int inst = 0; inst < 50; ++inst) {
    PriorConfig pr;
    pr.var_z2 = rng.uniform(0.05, 2.0);
    pr.var_mu2 = rng.uniform(0.1, 3.0);
    const int n = 1 + static_cast<int>(rng.below(30)), d = 1 + static_cast<int>(rng.below(6));
    const Mat enc = randn(rng, n, d, 2.0);
    const Vec got = infer_seq_mean(enc, pr);
    std::vector<Vec> rows;
    for (int r = 0; r < n; ++r) rows.push_back(enc.row(r).transpose());
    const Vec got_span = infer_seq_mean(std::span<const Vec>(rows), pr);
    for (int c = 0; c < d; ++c) {
      oracle::Row col;
      for (int r = 0; r < n; ++r) col.push_back(enc(r, c));
      const double want = oracle::seq_mean_1d(col, pr.var_z2, pr.var_mu2);
      err.add(got(c), want, "infer_seq_mean(matrix)");
      err.add(got_span(c), want, "infer_seq_mean(span)");
    }
  }
  Mat scalar(2, 1);
  scalar << 1.0, 3.0;
  PriorConfig pr;
  pr.var_z2 = 0.25;
  pr.var_mu2 = 1.0;
  const double v = infer_seq_mean(scalar, pr)(0);
  Outcome o;
  o.pass = err.value <= 1e-6 && std::abs(v - 4.0 / 2.25) <= 1e-6 && std::abs(v - 1.7778) < 5e-5;
  o.detail = fmt("max error %.3g; {1,3} -> %.6f", err.value, v);
  return o;
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc;
  mc.feat_dim = 3;
  mc.seg_len = 4;
  mc.hidden = 4;
  mc.layers = 1;
  mc.z1_dim = 2;
  mc.z2_dim = 2;
  mc.disc_hidden = 4;
  PriorConfig pr;
  Fhvae model(mc, pr, 11);
  Fhvae reference(mc, pr, 12);
  Discriminator disc(mc, 13);
  LossWeights w;

  Rng rng(5);
  const int B = 5;
  std::vector<Mat> segs;
  for (int b = 0; b < B; ++b) segs.push_back(randn(rng, mc.seg_len, mc.feat_dim));
  std::vector<const Mat*> ptrs;
  for (const auto& s : segs) ptrs.push_back(&s);
  const Mat packed = pack_segments(std::span<const Mat* const>(ptrs));
  const std::vector<int> labels{0, 1, 0, 1, 1}, own{0, 1, 2, 0, 1};
  const Mat table = randn(rng, 3, mc.z2_dim, 0.5);
  Mat mu2_rows(B, mc.z2_dim);
  for (int b = 0; b < B; ++b) mu2_rows.row(b) = table.row(own[b]);
  Vec counts(B);
  counts << 3, 2, 4, 3, 2;
  const Mat eps2 = randn(rng, B, mc.z2_dim), eps1 = randn(rng, B, mc.z1_dim);

  Mat ref_mean, ref_logvar;
  {
    ad::Graph g;
    const nn::Binder bind(g, false);
    const ad::Var x = g.constant(packed);
    const GaussVars r2 = reference.encode_z2(bind, x, B);
    const GaussVars r1 = reference.encode_z1(bind, x, r2.mean, B);
    ref_mean = r1.mean.value();
    ref_logvar = r1.logvar.value();
  }

  // Total objective with every extension on; the discriminator is a constant
  // for the model update.
  auto objective = [&](GenMode mode, bool track, bool differentiate) {
    ad::Graph g;
    const nn::Binder bind(g, track);
    const nn::Binder frozen(g, false);
    const ad::Var x = g.constant(packed);
    const GaussVars q2 = model.encode_z2(bind, x, B);
    const ad::Var z2 = reparam_sample(q2, eps2);
    const GaussVars q1 = model.encode_z1(bind, x, z2, B);
    const ad::Var z1 = reparam_sample(q1, eps1);
    const GaussVars rec = model.decode(bind, z1, z2, B);
    ad::Var total = ad::mean(graph::lower_bound(x, rec, q1, q2, mu2_rows, counts, pr, mc.seg_len, B));
    total = ad::add(total, ad::scale(ad::mean(graph::z2_disc(z2, table, own, pr)), w.z2_disc));
    total = ad::add(total, ad::scale(graph::gen_loss(disc.probability(frozen, q1.mean), labels, mode), w.gen));
    total = ad::add(total, ad::scale(graph::reference_loss(q1, ref_mean, ref_logvar, labels), w.ref));
    total = ad::add(total, ad::scale(graph::disentangle_loss(q1.mean, q2.mean), w.dstg));
    if (differentiate) g.backward(total);
    return total.scalar();
  };
  Mat mu1;
  {
    ad::Graph g;
    const nn::Binder bind(g, false);
    const ad::Var x = g.constant(packed);
    const GaussVars q2 = model.encode_z2(bind, x, B);
    mu1 = model.encode_z1(bind, x, reparam_sample(q2, eps2), B).mean.value();
  }
  auto disc_objective = [&](bool track, bool differentiate) {
    ad::Graph g;
    const nn::Binder bind(g, track);
    const ad::Var l = graph::disc_loss(disc.probability(bind, g.constant(mu1)), labels);
    if (differentiate) g.backward(l);
    return l.scalar();
  };

  constexpr double h = 1e-5, rel = 1e-3, floor = 1e-6;
  double worst = 0.0;
  std::string worst_name;
  long checked = 0, bad = 0;
  auto compare = [&](const std::vector<ad::Parameter*>& params, const std::function<double()>& value,
                     const std::string& tag) {
    for (auto* p : params) {
      const Mat analytic = p->grad;
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double keep = p->value.data()[i];
        p->value.data()[i] = keep + h;
        const double up = value();
        p->value.data()[i] = keep - h;
        const double down = value();
        p->value.data()[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic.data()[i];
        const double scale = std::max(std::abs(a), std::abs(numeric));
        const double r = scale > floor ? std::abs(a - numeric) / scale : 0.0;
        ++checked;
        if (r > rel) ++bad;
        if (r > worst) {
          worst = r;
          worst_name = tag + ":" + p->name;
        }
      }
    }
  };
  for (GenMode mode : {GenMode::kDysOnly, GenMode::kBoth}) {
    auto params = model.parameters();
    for (auto* p : params) p->zero_grad();
    objective(mode, true, true);
    compare(params, [&] { return objective(mode, false, false); },
            mode == GenMode::kDysOnly ? "total(dys)" : "total(both)");
  }
  {
    auto params = disc.parameters();
    for (auto* p : params) p->zero_grad();
    disc_objective(true, true);
    compare(params, [&] { return disc_objective(false, false); }, "disc");
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = bad == 0 && checked > 0 && secs < 120.0;
  o.detail = fmt("%.0f gradient entries, worst relative error %.3g, %.1f s", static_cast<double>(checked), worst, secs);
  if (bad) o.detail += " (" + std::to_string(bad) + " over tolerance, worst at " + worst_name + ")";
  return o;
}

namespace {

bool check_ood(const std::vector<SpeakerMeta>& spk, double threshold, std::string& why) {
  std::set<std::string> want_train, want_test;
  for (const auto& s : spk) (*s.intelligibility >= threshold ? want_train : want_test).insert(s.speaker_id);
  try {
    const SpeakerSplit sp = split_out_of_domain(spk, threshold);
    const std::set<std::string> tr(sp.train.begin(), sp.train.end()), te(sp.test.begin(), sp.test.end());
    if (tr != want_train || te != want_test || tr.size() != sp.train.size() || te.size() != sp.test.size()) {
      why = "ood split membership";
      return false;
    }
  } catch (const ConfigError&) {
    if (!want_train.empty() && !want_test.empty()) {
      why = "ood split rejected a valid corpus";
      return false;
    }
  }
  return true;
}

bool check_indomain(const std::vector<SpeakerMeta>& spk, std::string& why) {
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& s : spk) ranked.emplace_back(-*s.intelligibility, s.speaker_id);
  std::sort(ranked.begin(), ranked.end());
  std::set<std::string> want_train, want_test;
  for (std::size_t i = 0; i < ranked.size(); ++i) (i % 2 == 0 ? want_train : want_test).insert(ranked[i].second);
  const SpeakerSplit sp = split_in_domain(spk);
  const std::set<std::string> tr(sp.train.begin(), sp.train.end()), te(sp.test.begin(), sp.test.end());
  if (tr != want_train || te != want_test) {
    why = "in-domain split membership";
    return false;
  }
  for (const auto& s : tr)
    if (te.count(s)) {
      why = "in-domain split overlap";
      return false;
    }
  return true;
}

bool check_kfold(const std::vector<UttRef>& utts, int n_folds, std::uint64_t seed, std::string& why) {
  std::map<Domain, std::set<std::string>> spk_by_domain;
  for (const auto& u : utts) spk_by_domain[u.domain].insert(u.speaker_id);
  const bool feasible = spk_by_domain[Domain::kControl].size() >= static_cast<std::size_t>(n_folds) &&
                        spk_by_domain[Domain::kDysarthric].size() >= static_cast<std::size_t>(n_folds);
  KfoldPlan plan;
  try {
    plan = kfold_blocks(utts, n_folds, seed);
  } catch (const ConfigError&) {
    if (feasible) why = "kfold rejected a feasible corpus";
    return !feasible;
  } catch (const ContractError&) {
    if (feasible) why = "kfold rejected a feasible corpus";
    return !feasible;
  }
  if (!feasible) {
    why = "kfold accepted an infeasible corpus";
    return false;
  }
  const int n = static_cast<int>(utts.size());
  if (static_cast<int>(plan.blocks.size()) != n_folds || static_cast<int>(plan.folds.size()) != n_folds) {
    why = "kfold block count";
    return false;
  }
  std::map<std::string, int> block_of_spk;
  for (int b = 0; b < n_folds; ++b)
    for (const auto& s : plan.blocks[b])
      if (!block_of_spk.emplace(s, b).second) {
        why = "speaker in two blocks";
        return false;
      }
  std::map<std::string, int> utt_count;
  for (const auto& u : utts) utt_count[u.speaker_id]++;
  if (block_of_spk.size() != utt_count.size()) {
    why = "blocks do not cover all speakers";
    return false;
  }
  for (int i = 0; i < n; ++i)
    if (plan.block_of_utt[i] != block_of_spk.at(utts[i].speaker_id)) {
      why = "utterance block differs from its speaker's block";
      return false;
    }
  std::vector<int> tested(n, 0);
  for (int f = 0; f < n_folds; ++f) {
    const Fold& fold = plan.folds[f];
    std::vector<int> seen(n, 0);
    for (int i : fold.train) seen[i] += 1;
    for (int i : fold.val) seen[i] += 1;
    for (int i : fold.test) {
      seen[i] += 1;
      tested[i] += 1;
    }
    for (int i = 0; i < n; ++i)
      if (seen[i] != 1) {
        why = "fold roles do not partition the utterances";
        return false;
      }
    for (int i : fold.test)
      if (plan.block_of_utt[i] != f) {
        why = "fold test set is not its block";
        return false;
      }
    for (int i : fold.val)
      if (plan.block_of_utt[i] != (f + 1) % n_folds) {
        why = "fold validation set is not the next block";
        return false;
      }
    std::set<std::string> tr, other;
    for (int i : fold.train) tr.insert(utts[i].speaker_id);
    for (int i : fold.val) other.insert(utts[i].speaker_id);
    for (int i : fold.test) other.insert(utts[i].speaker_id);
    for (const auto& s : tr)
      if (other.count(s)) {
        why = "speaker shared across fold roles";
        return false;
      }
  }
  for (int i = 0; i < n; ++i)
    if (tested[i] != 1) {
      why = "utterance not tested exactly once";
      return false;
    }
  for (Domain d : {Domain::kControl, Domain::kDysarthric}) {
    std::vector<int> per_block(n_folds, 0);
    int biggest = 0;
    for (const auto& s : spk_by_domain[d]) {
      per_block[block_of_spk.at(s)] += utt_count.at(s);
      biggest = std::max(biggest, utt_count.at(s));
    }
    const auto [lo, hi] = std::minmax_element(per_block.begin(), per_block.end());
    if (*hi - *lo > biggest) {
      why = "domain imbalance across blocks exceeds one speaker";
      return false;
    }
  }
  return true;
}

}  // namespace

Outcome protocol_properties(int max_speakers) {
  const auto t0 = std::chrono::steady_clock::now();
  set_warnings_quiet(true);
  Rng rng(1234);
  long cases = 0;
  std::string why;
  bool ok = true;
  for (int n_spk = 2; n_spk <= max_speakers && ok; ++n_spk) {
    for (int rep = 0; rep < 6 && ok; ++rep) {
      std::vector<SpeakerMeta> spk;
      std::vector<UttRef> utts;
      for (int k = 0; k < n_spk; ++k) {
        SpeakerMeta m;
        m.speaker_id = "s" + std::to_string(k);
        m.domain = rng.below(2) ? Domain::kDysarthric : Domain::kControl;
        // Coarse scores so that ties and threshold hits occur.
        m.intelligibility = 5.0 * static_cast<double>(rng.below(21));
        spk.push_back(m);
        const int n_utt = 1 + static_cast<int>(rng.below(8));
        for (int u = 0; u < n_utt; ++u) utts.push_back({m.speaker_id, m.domain});
      }
      rng.shuffle(utts);
      const double threshold = rep % 2 ? 70.0 : 5.0 + 5.0 * static_cast<double>(rng.below(19));
      ok = ok && check_ood(spk, threshold, why);
      ok = ok && check_indomain(spk, why);
      const int folds = rep % 3 == 0 ? 6 : 2 + static_cast<int>(rng.below(5));
      ok = ok && check_kfold(utts, folds, rng.next_u64(), why);
      ++cases;
    }
  }
  // micro-F1: hand-counted example (TP 4, FP 1, FN 1) and random cases.
  const std::vector<LabelSet> truth{{0, 1}, {1, 2}, {3}}, pred{{0, 1}, {1}, {3, 4}};
  const double hand = micro_f1(pred, truth);
  double f1_err = std::abs(hand - 0.8);
  for (int c = 0; c < 500; ++c) {
    const int n = 1 + static_cast<int>(rng.below(12)), L = 1 + static_cast<int>(rng.below(8));
    std::vector<LabelSet> p(n), t(n);
    for (int u = 0; u < n; ++u)
      for (int l = 0; l < L; ++l) {
        if (rng.below(3) == 0) p[u].push_back(l);
        if (rng.below(3) == 0) t[u].push_back(l);
      }
    f1_err = std::max(f1_err, std::abs(micro_f1(p, t) - oracle::micro_f1(p, t)));
  }
  f1_err = std::max(f1_err, std::abs(micro_f1({{}, {}}, {{}, {}})));
  set_warnings_quiet(false);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && f1_err <= 1e-12 && secs < 30.0;
  o.detail = fmt("%.0f randomized corpora (2..%.0f speakers), micro-F1 hand example %.4f", static_cast<double>(cases),
                 max_speakers, hand);
  o.detail += fmt(", %.2f s", secs);
  if (!ok) o.detail += " (failed: " + why + ")";
  if (f1_err > 1e-12) o.detail += fmt(" (micro-F1 error %.3g)", f1_err);
  return o;
}

namespace {

SynthExperimentConfig tiny_experiment(std::uint64_t seed) {
  SynthExperimentConfig c = default_synth_experiment(seed);
  for (SynthConfig* s : {&c.pretrain_corpus, &c.finetune_corpus, &c.eval_corpus}) {
    s->obs_dim = 6;
    s->segments_per_sequence = 3;
    s->frames_per_segment = 8;
    s->n_labels = 3;
  }
  c.pretrain_corpus.n_sequences = 12;
  c.pretrain_corpus.n_speakers = 4;
  c.finetune_corpus.n_sequences = 16;
  c.finetune_corpus.n_speakers = 8;
  c.eval_corpus.n_sequences = 48;
  c.eval_corpus.n_speakers = 24;
  c.model.feat_dim = 6;
  c.model.seg_len = 8;
  c.model.hidden = 6;
  c.model.z1_dim = 2;
  c.model.z2_dim = 2;
  c.model.disc_hidden = 4;
  c.pretrain.max_epochs = 2;
  c.pretrain.patience = 1;
  c.pretrain.batch_size = 16;
  c.pretrain.train_shift = 4;
  c.pretrain.log_steps = true;
  c.finetune = c.pretrain;
  c.finetune.seed = derive_seed(seed, Stream::kInit, 2);
  c.eval.probe.epochs = 3;
  c.eval.intent.epochs = 2;
  c.eval.intent.hidden = 4;
  c.repeats = 2;
  c.n_folds = 3;
  c.seqid_chunk = 2;
  c.extract_shift = 4;
  return c;
}

}  // namespace

Outcome reproducibility() {
  set_warnings_quiet(true);
  std::vector<std::string> logs, grids;
  for (int run = 0; run < 2; ++run) {
    const SynthExperimentConfig cfg = tiny_experiment(3);
    std::ostringstream metrics;
    ExperimentOptions opts;
    opts.metrics = &metrics;
    const SeedResult r = run_synth_seed(cfg, opts);
    logs.push_back(metrics.str());
    grids.push_back(render_grid({r}));
  }
  set_warnings_quiet(false);
  Outcome o;
  o.pass = !logs[0].empty() && logs[0] == logs[1] && grids[0] == grids[1];
  o.detail = fmt("metrics log %.0f bytes", static_cast<double>(logs[0].size()));
  o.detail += logs[0] == logs[1] ? "; logs identical" : "; logs differ";
  o.detail += grids[0] == grids[1] ? ", grids identical" : ", grids differ";
  return o;
}

SyntheticRun run_synthetic(const std::vector<std::uint64_t>& seeds, std::ostream* progress) {
  SyntheticRun run;
  for (std::uint64_t seed : seeds) {
    ExperimentOptions opts;
    opts.methods = {Method::kFinetuned, Method::kDysOnly, Method::kDisentangle};
    opts.fbank = false;
    opts.progress = progress;
    SeedResult r = run_synth_seed(default_synth_experiment(seed), opts);
    run.max_pretrain_seconds = std::max(run.max_pretrain_seconds, r.pretrain_seconds);
    double inv = r.pretrain_seconds;
    for (Method m : {Method::kFinetuned, Method::kDysOnly}) inv += r.row(m).train_seconds + r.row(m).extract_seconds + r.row(m).probe_seconds;
    run.invariance_seconds.push_back(inv);
    run.results.push_back(std::move(r));
  }
  return run;
}

namespace {

std::string per_seed(const std::vector<double>& a, const std::vector<double>& b) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) s += fmt(i ? ", %.3f/%.3f" : "%.3f/%.3f", a[i], b[i]);
  return s;
}

int required(std::size_t n) { return n >= 5 ? 4 : static_cast<int>(n); }

}  // namespace

Outcome factorization(const SyntheticRun& run) {
  int wins = 0;
  std::vector<double> z1, z2;
  for (const auto& r : run.results) {
    z1.push_back(r.seqid_z1);
    z2.push_back(r.seqid_z2);
    if (r.seqid_z2 - r.seqid_z1 >= 0.10) ++wins;
  }
  Outcome o;
  o.pass = wins >= required(run.results.size()) && run.max_pretrain_seconds <= 600.0;
  o.detail = std::to_string(wins) + "/" + std::to_string(run.results.size()) +
             " seeds with z2 - z1 >= 10 points (z2/z1: " + per_seed(z2, z1) + "), longest pretraining " +
             fmt("%.0f s", run.max_pretrain_seconds);
  return o;
}

Outcome invariance(const SyntheticRun& run) {
  int wins = 0;
  std::vector<double> d1, d2;
  double total = 0.0;
  for (std::size_t i = 0; i < run.results.size(); ++i) {
    const auto& plain = run.results[i].row(Method::kFinetuned);
    const auto& adv = run.results[i].row(Method::kDysOnly);
    d1.push_back(adv.probe_z1 - plain.probe_z1);
    d2.push_back(adv.probe_z2 - plain.probe_z2);
    if (adv.probe_z1 <= plain.probe_z1 - 0.05 && adv.probe_z2 >= plain.probe_z2) ++wins;
    total += run.invariance_seconds[i];
  }
  Outcome o;
  o.pass = wins >= required(run.results.size()) && total <= 900.0;
  o.detail = std::to_string(wins) + "/" + std::to_string(run.results.size()) +
             " seeds with z1 probe -5 points and z2 probe not lower (change z1/z2: " + per_seed(d1, d2) + "), " +
             fmt("%.0f s", total);
  return o;
}

Outcome transfer(const SyntheticRun& run) {
  int wins = 0;
  std::vector<double> ood, ind;
  double ind_sum = 0.0;
  for (const auto& r : run.results) {
    const auto& plain = r.row(Method::kFinetuned);
    const auto& adv = r.row(Method::kDysOnly);
    ood.push_back(adv.ood_f1 - plain.ood_f1);
    ind.push_back(adv.indomain_f1 - plain.indomain_f1);
    ind_sum += adv.indomain_f1 - plain.indomain_f1;
    if (adv.ood_f1 > plain.ood_f1) ++wins;
  }
  const double ind_mean = ind_sum / static_cast<double>(run.results.size());
  Outcome o;
  o.pass = wins >= required(run.results.size()) && ind_mean >= -0.02;
  o.detail = std::to_string(wins) + "/" + std::to_string(run.results.size()) +
             " seeds with higher out-of-domain F1; mean in-domain change " + fmt("%+.3f", ind_mean) +
             " (change ood/indomain: " + per_seed(ood, ind) + ")";
  return o;
}

Outcome disentanglement(const SyntheticRun& run) {
  int wins = 0;
  std::vector<double> ratio, dz1;
  for (const auto& r : run.results) {
    const auto& base = r.row(Method::kDysOnly);
    const auto& dst = r.row(Method::kDisentangle);
    ratio.push_back(dst.cross_corr / base.cross_corr);
    dz1.push_back(dst.probe_z1 - base.probe_z1);
    if (dst.cross_corr <= 0.5 * base.cross_corr && dst.probe_z1 < base.probe_z1) ++wins;
  }
  Outcome o;
  o.pass = wins >= required(run.results.size());
  o.detail = std::to_string(wins) + "/" + std::to_string(run.results.size()) +
             " seeds with cross-correlation halved and lower z1 probe (ratio/z1 change: " + per_seed(ratio, dz1) + ")";
  return o;
}

}  // namespace criteria
