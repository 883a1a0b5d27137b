#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fhvae/common.hpp"

namespace fhvae {

enum class Domain : int { kControl = 0, kDysarthric = 1 };

inline int label_of(Domain d) { return static_cast<int>(d); }
Domain domain_from_int(int v);

struct SpeakerMeta {
  std::string speaker_id;
  Domain domain = Domain::kControl;
  std::optional<double> intelligibility;  // 0..100

  void validate() const;
};

/// T x D log-mel frames (10 ms advance). Held in double precision in memory;
/// stored as little-endian float32 on disk.
using FeatureMatrix = Mat;

struct ManifestEntry {
  std::string utterance_id;
  std::string path;                       // audio (.wav) or feature file; may be empty for inline features
  std::optional<FeatureMatrix> features;  // inline features, e.g. from the synthetic generator
  std::string speaker_id;
  std::optional<std::vector<int>> labels;  // slot-value label ids
};

struct CorpusManifest {
  int n_labels = 0;
  std::vector<ManifestEntry> entries;
  std::map<std::string, SpeakerMeta> speakers;

  /// Checks unique utterance ids, speaker resolution and label ranges.
  void validate() const;
  const SpeakerMeta& speaker_of(const ManifestEntry& e) const;
};

/// One training unit: `seg_len` consecutive frames of one utterance.
struct SegmentRecord {
  Mat x;  // seg_len x D
  int sequence_id = 0;
  Domain domain = Domain::kControl;
  int frame_offset = 0;
};

// ---------------------------------------------------------------------------
// Manifest text format (one record per line, tab or space separated, '#'
// starts a comment):
//
//   n_labels <int>
//   speaker <speaker_id> <domain 0|1> <intelligibility|->
//   utt <utterance_id> <path> <speaker_id> <label,label,...|->
//
// Relative paths resolve against the manifest's directory.
// ---------------------------------------------------------------------------
CorpusManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);

// Feature file layout: "FHVF" magic, uint32 version (1), uint32 rows,
// uint32 cols, then rows*cols float32 values row-major. All little-endian.
void write_feature_file(const std::filesystem::path& path, const Mat& m);
Mat read_feature_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Front end
// ---------------------------------------------------------------------------
struct FrontendConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  int window_samples() const;
  int hop_samples() const;
  /// Smallest power of two >= window_samples().
  int fft_size() const;
  /// Frame count for n samples: 1 + floor((n - window) / hop) when n >= window,
  /// 1 (zero padded) for 0 < n < window.
  int frame_count(std::size_t n_samples) const;
  void validate() const;
};

struct Waveform {
  std::vector<double> samples;  // mono, nominal range [-1, 1]
  int sample_rate = 16000;
};

/// Reads mono PCM16 or float32 RIFF/WAVE.
Waveform read_wav(const std::filesystem::path& path);
void write_wav_pcm16(const std::filesystem::path& path, const Waveform& w);

/// Hamming-windowed power spectrum -> triangular HTK mel filters -> log of
/// floored band energies.
FeatureMatrix compute_logmel(const Waveform& audio, const FrontendConfig& cfg);

/// Loads or computes features for every manifest entry, using `workers`
/// threads. The result is ordered by utterance id regardless of worker count.
std::vector<std::pair<std::string, FeatureMatrix>> load_corpus_features(const CorpusManifest& manifest,
                                                                        const std::filesystem::path& base_dir,
                                                                        const FrontendConfig& frontend, int workers);

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------
/// Number of segments of length seg_len at the given shift.
int segment_count(int frames, int seg_len, int shift);

/// Slices `feat` at offsets 0, shift, 2*shift, ... Utterances shorter than
/// seg_len give an empty list and a warning.
std::vector<SegmentRecord> segment_utterance(const FeatureMatrix& feat, int seg_len, int shift, int sequence_id = 0,
                                             Domain domain = Domain::kControl);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------
struct NormStats {
  Vec mean;
  Vec scale;  // standard deviation; 1 for constant dimensions

  bool empty() const { return mean.size() == 0; }
};

/// Per-dimension statistics over all frames of all matrices.
NormStats fit_norm_stats(std::span<const FeatureMatrix> features);
FeatureMatrix normalize(const FeatureMatrix& x, const NormStats& stats);
FeatureMatrix denormalize(const FeatureMatrix& x, const NormStats& stats);
/// Fits stats when none are given, then normalizes every matrix.
std::pair<std::vector<FeatureMatrix>, NormStats> normalize_corpus(std::span<const FeatureMatrix> features,
                                                                  const std::optional<NormStats>& stats);
void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic two-factor corpus
// ---------------------------------------------------------------------------
struct SynthConfig {
  int n_sequences = 40;
  int segments_per_sequence = 6;  // non-overlapping blocks of frames_per_segment frames
  int seq_factor_dim = 4;
  int seg_factor_dim = 4;
  double domain_shift_strength = 0.0;
  double noise_std = 0.1;
  std::uint64_t seed = 0;

  int obs_dim = 80;
  int frames_per_segment = 20;
  /// Sequences are assigned round-robin to speakers; 0 means one speaker per sequence.
  int n_speakers = 0;
  /// Fraction of speakers that are dysarthric.
  double dysarthric_fraction = 0.0;
  /// Dysarthric intelligibility is drawn uniformly from this range.
  double intelligibility_lo = 20.0;
  double intelligibility_hi = 95.0;
  /// Give control speakers an intelligibility of 100 instead of none.
  bool control_intelligibility = false;
  /// Intent labels (0 disables labels).
  int n_labels = 0;
  double prototype_scale = 1.5;
  double content_std = 0.5;
  double speaker_std = 1.0;
  double sequence_std = 0.3;
  /// Fixed random maps and label prototypes depend only on this seed, so
  /// corpora generated with different `seed` share the same world.
  std::uint64_t world_seed = 0;
  std::string speaker_prefix = "spk";

  void validate() const;
};

/// Ground truth kept alongside a synthetic corpus.
struct SynthTruth {
  Mat sequence_factors;  // n_sequences x seq_factor_dim (after domain shift)
  Mat segment_factors;   // (n_sequences * segments_per_sequence) x seg_factor_dim (after domain shift)
  std::vector<double> shift_amount;  // per sequence
};

struct SynthCorpus {
  CorpusManifest manifest;  // entries carry inline features
  SynthTruth truth;
};

/// Observation frame = A*c + B*s + noise, with c the segment factor and s
/// the sequence factor. Dysarthric speakers add shift*(u_c, u_s) to both
/// factors, where shift = strength * 2 * (1 - intelligibility / 100).
SynthCorpus synth_generate(const SynthConfig& cfg);

/// Stable digest of a manifest including inline features (FNV-1a 64).
std::uint64_t corpus_digest(const CorpusManifest& manifest);

}  // namespace fhvae
