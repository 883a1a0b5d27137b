#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fhvae/corpus.hpp"
#include "fhvae/rng.hpp"

using namespace fhvae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fhvae_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig c;
  c.n_sequences = 10;
  c.n_speakers = 5;
  c.obs_dim = 6;
  c.frames_per_segment = 5;
  c.segments_per_sequence = 4;
  c.n_labels = 3;
  c.dysarthric_fraction = 0.4;
  c.domain_shift_strength = 1.0;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(derive_seed(5, Stream::kInit)), b(derive_seed(5, Stream::kInit)), c(derive_seed(5, Stream::kNoise));
  const auto x = a.next_u64();
  CHECK(x == b.next_u64());
  CHECK(x != c.next_u64());
  CHECK(derive_seed(5, Stream::kCache, 1) != derive_seed(5, Stream::kCache, 2));
  Rng u(1);
  double mean = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = u.normal();
    mean += v;
    sq += v * v;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("synthetic corpus is deterministic in its seed") {
  const SynthCorpus a = synth_generate(small_synth(7)), b = synth_generate(small_synth(7)),
                    c = synth_generate(small_synth(8));
  CHECK(corpus_digest(a.manifest) == corpus_digest(b.manifest));
  CHECK(corpus_digest(a.manifest) != corpus_digest(c.manifest));
  CHECK(a.manifest.entries.size() == 10);
  CHECK(a.manifest.entries[0].features->rows() == 20);
  int dys = 0;
  for (const auto& [id, s] : a.manifest.speakers) {
    if (s.domain == Domain::kDysarthric) {
      ++dys;
      REQUIRE(s.intelligibility.has_value());
    }
  }
  CHECK(dys == 2);
}

TEST_CASE("synthetic domain shift follows the severity rule") {
  SynthConfig cfg = small_synth(3);
  cfg.intelligibility_lo = 40.0;
  cfg.intelligibility_hi = 60.0;
  const SynthCorpus c = synth_generate(cfg);
  for (std::size_t i = 0; i < c.manifest.entries.size(); ++i) {
    const SpeakerMeta& s = c.manifest.speaker_of(c.manifest.entries[i]);
    const double want = s.domain == Domain::kDysarthric ? 1.0 * 2.0 * (1.0 - *s.intelligibility / 100.0) : 0.0;
    CHECK(c.truth.shift_amount[i] == doctest::Approx(want));
  }
}

TEST_CASE("manifest and feature files round trip") {
  const fs::path dir = scratch("manifest");
  SynthCorpus c = synth_generate(small_synth(1));
  for (auto& e : c.manifest.entries) {
    write_feature_file(dir / (e.utterance_id + ".fhvf"), *e.features);
    e.path = e.utterance_id + ".fhvf";
  }
  CorpusManifest m = c.manifest;
  for (auto& e : m.entries) e.features.reset();
  write_manifest(m, dir / "corpus.manifest");
  const CorpusManifest back = read_manifest(dir / "corpus.manifest");
  REQUIRE(back.entries.size() == m.entries.size());
  CHECK(back.n_labels == 3);
  CHECK(back.entries[3].labels == m.entries[3].labels);
  CHECK(back.speakers.size() == m.speakers.size());
  const auto loaded = load_corpus_features(back, dir, FrontendConfig{}, 3);
  REQUIRE(loaded.size() == back.entries.size());
  for (std::size_t i = 1; i < loaded.size(); ++i) CHECK(loaded[i - 1].first < loaded[i].first);
  const Mat& orig = *c.manifest.entries[0].features;
  const Mat& got = loaded[0].second;
  CHECK((orig.cast<float>().cast<double>() - got).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("malformed inputs are reported") {
  const fs::path dir = scratch("malformed");
  {
    std::ofstream f(dir / "bad.manifest");
    f << "n_labels 2\nspeaker a 0 -\nutt u1 x.fhvf missing_speaker 0\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "bad.manifest"), Error);
  {
    std::ofstream f(dir / "bad.fhvf", std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(read_feature_file(dir / "bad.fhvf"), FormatError);
  CHECK_THROWS_AS(read_feature_file(dir / "absent.fhvf"), IoError);
}

TEST_CASE("segmentation counts and offsets") {
  CHECK(segment_count(20, 20, 1) == 1);
  CHECK(segment_count(19, 20, 1) == 0);
  CHECK(segment_count(100, 20, 8) == 11);
  Mat f(30, 2);
  for (int r = 0; r < 30; ++r) f.row(r).setConstant(r);
  const auto segs = segment_utterance(f, 10, 7);
  REQUIRE(segs.size() == 3);
  CHECK(segs[2].frame_offset == 14);
  CHECK(segs[2].x(0, 0) == 14.0);
  set_warnings_quiet(true);
  CHECK(segment_utterance(Mat::Zero(5, 2), 10, 1).empty());
  set_warnings_quiet(false);
}

TEST_CASE("normalization statistics") {
  Mat a(3, 2), b(1, 2);
  a << 1, 5, 2, 5, 3, 5;
  b << 6, 5;
  set_warnings_quiet(true);
  const NormStats s = fit_norm_stats(std::vector<Mat>{a, b});
  set_warnings_quiet(false);
  CHECK(s.mean(0) == doctest::Approx(3.0));
  CHECK(s.scale(0) == doctest::Approx(std::sqrt((4 + 1 + 0 + 9) / 4.0)));
  CHECK(s.scale(1) == 1.0);
  const Mat n = normalize(a, s);
  CHECK(n(0, 1) == 0.0);
  CHECK((denormalize(n, s) - a).norm() < 1e-12);
  const fs::path dir = scratch("norm");
  save_norm_stats(dir / "norm.stats", s);
  const NormStats back = load_norm_stats(dir / "norm.stats");
  CHECK(back.mean == s.mean);
  CHECK(back.scale == s.scale);
}

TEST_CASE("log-mel front end peaks at the tone frequency") {
  FrontendConfig cfg;
  cfg.n_mels = 40;
  Waveform w;
  w.sample_rate = 16000;
  const double f0 = 1000.0;
  for (int i = 0; i < 16000; ++i) w.samples.push_back(0.5 * std::sin(2.0 * M_PI * f0 * i / 16000.0));
  const Mat feats = compute_logmel(w, cfg);
  CHECK(feats.rows() == cfg.frame_count(w.samples.size()));
  CHECK(feats.rows() == 98);
  CHECK(feats.cols() == 40);
  // Centre frequencies of HTK mel bands: equally spaced on the mel scale.
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  const double step = (mel(cfg.fmax) - mel(cfg.fmin)) / (cfg.n_mels + 1);
  int nearest = 0;
  double best = 1e9;
  for (int k = 0; k < cfg.n_mels; ++k) {
    const double d = std::abs(mel(cfg.fmin) + (k + 1) * step - mel(f0));
    if (d < best) {
      best = d;
      nearest = k;
    }
  }
  Eigen::Index peak = 0;
  feats.row(50).maxCoeff(&peak);
  CHECK(std::abs(static_cast<int>(peak) - nearest) <= 1);
}

TEST_CASE("wav round trip") {
  const fs::path dir = scratch("wav");
  Waveform w;
  for (int i = 0; i < 800; ++i) w.samples.push_back(0.25 * std::sin(i * 0.1));
  write_wav_pcm16(dir / "a.wav", w);
  const Waveform back = read_wav(dir / "a.wav");
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK(back.sample_rate == 16000);
  double err = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) err = std::max(err, std::abs(back.samples[i] - w.samples[i]));
  CHECK(err < 1.0 / 32767.0);
}
