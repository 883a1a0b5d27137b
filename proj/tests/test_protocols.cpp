#include <doctest.h>

#include <cmath>
#include <set>

#include "criteria.hpp"
#include "fhvae/evalharness.hpp"
#include "fhvae/rng.hpp"

using namespace fhvae;

namespace {

SpeakerMeta spk(const std::string& id, Domain d, std::optional<double> intel) {
  SpeakerMeta m;
  m.speaker_id = id;
  m.domain = d;
  m.intelligibility = intel;
  return m;
}

}  // namespace

TEST_CASE("split, fold and micro-F1 property suites") {
  const criteria::Outcome o = criteria::protocol_properties(50);
  INFO(o.detail);
  CHECK(o.pass);
}

TEST_CASE("out-of-domain split uses the threshold inclusively") {
  const std::vector<SpeakerMeta> s{spk("a", Domain::kDysarthric, 70.0), spk("b", Domain::kDysarthric, 69.9),
                                   spk("c", Domain::kDysarthric, 95.0)};
  const SpeakerSplit sp = split_out_of_domain(s, 70.0);
  CHECK(std::set<std::string>(sp.train.begin(), sp.train.end()) == std::set<std::string>{"a", "c"});
  CHECK(sp.test == std::vector<std::string>{"b"});
  CHECK_THROWS_AS(split_out_of_domain(s, 10.0), ConfigError);
  const std::vector<SpeakerMeta> missing{spk("a", Domain::kControl, std::nullopt)};
  CHECK_THROWS_AS(split_out_of_domain(missing, 70.0), ContractError);
}

TEST_CASE("in-domain split alternates ranks with ties broken by id") {
  const std::vector<SpeakerMeta> s{spk("d", Domain::kDysarthric, 50.0), spk("a", Domain::kDysarthric, 80.0),
                                   spk("c", Domain::kDysarthric, 50.0), spk("b", Domain::kDysarthric, 90.0)};
  const SpeakerSplit sp = split_in_domain(s);
  // Ranks: b(90), a(80), c(50), d(50).
  CHECK(std::set<std::string>(sp.train.begin(), sp.train.end()) == std::set<std::string>{"b", "c"});
  CHECK(std::set<std::string>(sp.test.begin(), sp.test.end()) == std::set<std::string>{"a", "d"});
}

TEST_CASE("micro-F1 hand example and empty case") {
  CHECK(micro_f1({{0, 1}, {1}, {3, 4}}, {{0, 1}, {1, 2}, {3}}) == doctest::Approx(0.8));
  set_warnings_quiet(true);
  CHECK(micro_f1({{}}, {{}}) == 0.0);
  set_warnings_quiet(false);
  CHECK_THROWS(micro_f1({{0}}, {{0}, {1}}));
}

TEST_CASE("kfold rejects too few speakers per domain") {
  std::vector<UttRef> u;
  for (int i = 0; i < 5; ++i) u.push_back({"c" + std::to_string(i), Domain::kControl});
  for (int i = 0; i < 8; ++i) u.push_back({"d" + std::to_string(i), Domain::kDysarthric});
  CHECK_THROWS_AS(kfold_blocks(u, 6, 0), ConfigError);
  CHECK_NOTHROW(kfold_blocks(u, 5, 0));
}

TEST_CASE("probe separates separable classes") {
  Rng r(1);
  Mat x(200, 3);
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    const int c = i % 2;
    for (int j = 0; j < 3; ++j) x(i, j) = r.normal() * 0.3 + (c ? 2.0 : -2.0) * (j == 0);
    y.push_back(c);
  }
  ProbeConfig pc;
  pc.epochs = 20;
  Probe p = train_probe(x, y, 2, pc);
  CHECK(p.accuracy(x, y) > 0.97);
  CHECK_THROWS_AS(train_probe(x, std::vector<int>(200, 1), 2, pc), ContractError);
}

TEST_CASE("intent model learns label-dependent sequences") {
  Rng r(2);
  std::vector<Mat> seqs;
  std::vector<LabelSet> labels;
  for (int i = 0; i < 120; ++i) {
    LabelSet l;
    for (int k = 0; k < 3; ++k)
      if (r.below(2)) l.push_back(k);
    Mat s(8, 3);
    for (int t = 0; t < 8; ++t)
      for (int k = 0; k < 3; ++k) s(t, k) = r.normal() * 0.3 + (std::count(l.begin(), l.end(), k) ? 1.5 : -1.5);
    seqs.push_back(s);
    labels.push_back(l);
  }
  IntentConfig ic;
  ic.epochs = 15;
  IntentModel m = train_intent_model(seqs, labels, 3, ic);
  CHECK(micro_f1(m.predict(seqs), labels) > 0.95);
  CHECK_THROWS_AS(train_intent_model(seqs, labels, 0, ic), ConfigError);
}

TEST_CASE("evaluation suite keeps speakers disjoint and is repeat-deterministic") {
  Rng r(3);
  EvalData d;
  d.n_labels = 2;
  for (int k = 0; k < 14; ++k) {
    const std::string id = "s" + std::to_string(k);
    d.speakers[id] = spk(id, k % 2 ? Domain::kDysarthric : Domain::kControl, 30.0 + 5.0 * k);
    for (int u = 0; u < 4; ++u) {
      d.utterance_ids.push_back(id + "_" + std::to_string(u));
      d.speaker_ids.push_back(id);
      const int lab = static_cast<int>(r.below(2));
      d.labels.push_back({lab});
      Mat s(6, 2);
      for (int t = 0; t < 6; ++t) {
        s(t, 0) = r.normal() + (lab ? 1.0 : -1.0);
        s(t, 1) = r.normal() + (k % 2 ? 1.0 : -1.0);
      }
      d.inputs[InputKind::kZ1].push_back(s);
      d.inputs[InputKind::kZ2].push_back(s.col(1));
    }
  }
  EvalOptions opts;
  opts.probe.epochs = 10;
  opts.intent.epochs = 5;
  SplitSpec kf{Protocol::kKfold, 70.0, 6, 2};
  const EvalReport a = run_eval_suite(d, InputKind::kZ12, kf, opts), b = run_eval_suite(d, InputKind::kZ12, kf, opts);
  CHECK(a.scores == b.scores);
  CHECK(a.scores.size() == 2);
  CHECK(a.mean > 0.8);
  CHECK(a.per_speaker.size() == 14);
  SplitSpec ood{Protocol::kOutOfDomain, 70.0, 6, 2};
  const EvalReport o = run_eval_suite(d, InputKind::kZ1, ood, opts);
  CHECK(o.scores.size() == 2);
  CHECK(o.table().find("repeat") != std::string::npos);
  CHECK(!o.summary().empty());
  CHECK(d.sequences(InputKind::kZ12)[0].cols() == 3);
}
