#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fhvae/corpus.hpp"
#include "fhvae/rng.hpp"

namespace fhvae {

void SynthConfig::validate() const {
  if (n_sequences < 1 || segments_per_sequence < 1 || seq_factor_dim < 1 || seg_factor_dim < 1 || obs_dim < 1 ||
      frames_per_segment < 1)
    throw ConfigError("synth: all counts and dimensions must be >= 1");
  if (!(domain_shift_strength >= 0.0)) throw ConfigError("synth: domain_shift_strength must be >= 0");
  if (!(noise_std > 0.0)) throw ConfigError("synth: noise_std must be > 0");
  if (n_speakers < 0 || n_labels < 0) throw ConfigError("synth: n_speakers and n_labels must be >= 0");
  if (!(dysarthric_fraction >= 0.0 && dysarthric_fraction <= 1.0))
    throw ConfigError("synth: dysarthric_fraction must lie in [0, 1]");
  if (!(intelligibility_lo >= 0.0 && intelligibility_lo <= intelligibility_hi && intelligibility_hi <= 100.0))
    throw ConfigError("synth: need 0 <= intelligibility_lo <= intelligibility_hi <= 100");
}

namespace {

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = stddev * rng.normal();
  return m;
}

Vec unit(Rng& rng, Eigen::Index n) {
  Vec v = gaussian(rng, n, 1, 1.0);
  return v / v.norm();
}

std::string numbered(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return prefix + buf;
}

}  // namespace

SynthCorpus synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const int D = cfg.obs_dim, dc = cfg.seg_factor_dim, ds = cfg.seq_factor_dim;

  Rng world(derive_seed(cfg.world_seed, Stream::kSynthWorld));
  const Mat A = gaussian(world, D, dc, 1.0 / std::sqrt(static_cast<double>(dc)));
  const Mat B = gaussian(world, D, ds, 1.0 / std::sqrt(static_cast<double>(ds)));
  const Vec u_c = unit(world, dc);
  const Vec u_s = unit(world, ds);
  const Mat prototypes = gaussian(world, std::max(cfg.n_labels, 1), dc, cfg.prototype_scale);

  Rng rng(derive_seed(cfg.seed, Stream::kSynthSample));
  SynthCorpus out;
  out.manifest.n_labels = cfg.n_labels;

  const int n_spk = cfg.n_speakers > 0 ? cfg.n_speakers : cfg.n_sequences;
  const int n_dys = static_cast<int>(std::lround(cfg.dysarthric_fraction * n_spk));
  std::vector<int> perm(n_spk);
  for (int k = 0; k < n_spk; ++k) perm[k] = k;
  rng.shuffle(perm);
  std::vector<bool> is_dys(n_spk, false);
  for (int k = 0; k < n_dys; ++k) is_dys[perm[k]] = true;

  std::vector<std::string> spk_ids(n_spk);
  std::vector<double> shift(n_spk, 0.0);
  Mat spk_factor(n_spk, ds);
  for (int k = 0; k < n_spk; ++k) {
    SpeakerMeta meta;
    meta.speaker_id = numbered(cfg.speaker_prefix, k);
    meta.domain = is_dys[k] ? Domain::kDysarthric : Domain::kControl;
    if (is_dys[k]) {
      meta.intelligibility = rng.uniform(cfg.intelligibility_lo, cfg.intelligibility_hi);
      shift[k] = cfg.domain_shift_strength * 2.0 * (1.0 - *meta.intelligibility / 100.0);
    } else if (cfg.control_intelligibility) {
      meta.intelligibility = 100.0;
    }
    spk_factor.row(k) = gaussian(rng, 1, ds, cfg.speaker_std);
    spk_ids[k] = meta.speaker_id;
    out.manifest.speakers.emplace(meta.speaker_id, meta);
  }

  const int frames = cfg.segments_per_sequence * cfg.frames_per_segment;
  out.truth.sequence_factors.resize(cfg.n_sequences, ds);
  out.truth.segment_factors.resize(static_cast<Eigen::Index>(cfg.n_sequences) * cfg.segments_per_sequence, dc);
  out.truth.shift_amount.resize(cfg.n_sequences);

  for (int i = 0; i < cfg.n_sequences; ++i) {
    const int k = i % n_spk;
    const double delta = shift[k];
    const Vec s = spk_factor.row(k).transpose() + gaussian(rng, ds, 1, cfg.sequence_std) + delta * u_s;
    out.truth.sequence_factors.row(i) = s.transpose();
    out.truth.shift_amount[i] = delta;

    ManifestEntry e;
    e.utterance_id = numbered("utt", i);
    e.speaker_id = spk_ids[k];
    std::vector<int> labels;
    if (cfg.n_labels > 0) {
      const int count = (cfg.n_labels > 1 && rng.uniform() < 0.5) ? 2 : 1;
      while (static_cast<int>(labels.size()) < count) {
        const int l = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_labels)));
        if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
      }
      std::sort(labels.begin(), labels.end());
      e.labels = labels;
    }

    const Vec seq_part = B * s;
    FeatureMatrix x(frames, D);
    for (int n = 0; n < cfg.segments_per_sequence; ++n) {
      Vec c;
      if (!labels.empty()) {
        const int l = labels[n % labels.size()];
        c = prototypes.row(l).transpose() + gaussian(rng, dc, 1, cfg.content_std);
      } else {
        c = gaussian(rng, dc, 1, 1.0);
      }
      c += delta * u_c;
      out.truth.segment_factors.row(static_cast<Eigen::Index>(i) * cfg.segments_per_sequence + n) = c.transpose();
      const Vec mean = A * c + seq_part;
      for (int t = 0; t < cfg.frames_per_segment; ++t) {
        const int row = n * cfg.frames_per_segment + t;
        for (int d = 0; d < D; ++d) x(row, d) = mean(d) + cfg.noise_std * rng.normal();
      }
    }
    e.features = std::move(x);
    out.manifest.entries.push_back(std::move(e));
  }
  out.manifest.validate();
  return out;
}

}  // namespace fhvae
