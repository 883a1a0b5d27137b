#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fhvae/checkpoint.hpp"
#include "fhvae/losses.hpp"
#include "fhvae/model.hpp"

namespace fhvae {

struct TrainingConfig {
  double lr_fhvae = 1e-3;
  double lr_disc = 2e-4;
  int batch_size = 500;
  int hier_sample_size = 5000;
  int max_epochs = 50;
  int patience = 10;
  LossWeights weights;
  LossFlags flags;
  std::uint64_t seed = 0;

  /// Discriminator updates per batch.
  int n_disc_steps = 1;
  /// Recompute mu2 of the sequences in each batch before the step instead of
  /// once per cache.
  bool refresh_mu2_per_step = false;
  double validation_fraction = 0.1;
  /// Segment shift used when slicing training utterances.
  int train_shift = 8;
  /// Keep the discriminator of the input checkpoint instead of a fresh one.
  bool warm_start_disc = false;
  /// Compare parameter hashes around every update (test mode).
  bool check_isolation = false;
  /// Write one metrics line per step in addition to the per-epoch lines.
  bool log_steps = true;

  void validate() const;
};

/// One utterance cut into training segments.
struct TrainSequence {
  std::string utterance_id;
  std::string speaker_id;
  Domain domain = Domain::kControl;
  std::vector<Mat> segments;  // seg_len x D each
};

struct TrainCorpus {
  std::vector<TrainSequence> sequences;
  int feat_dim = 0;

  std::size_t segment_total() const;
  bool has_domain(Domain d) const;
};

/// Segments every utterance at `shift`; utterances shorter than `seg_len` are
/// dropped with a warning. `features` must align with `manifest.entries`.
TrainCorpus build_train_corpus(const CorpusManifest& manifest, const std::vector<FeatureMatrix>& features, int seg_len,
                               int shift);

/// Working set of hierarchical sampling.
struct SequenceCache {
  std::vector<int> sequences;     // corpus indices
  Mat mu2;                        // |cache| x z2_dim
  std::vector<int> n_segments;    // N_i per cached sequence

  std::size_t size() const { return sequences.size(); }
};

/// A batch refers to segments by (cache slot, segment index).
struct BatchItem {
  int slot = 0;
  int segment = 0;
};
using Batch = std::vector<BatchItem>;

/// mu2 estimates of the given corpus sequences under the current z2 encoder.
Mat compute_seq_means(Fhvae& model, const TrainCorpus& corpus, const std::vector<int>& sequences);

/// Draws caches of min(K, #remaining) sequences without replacement from a
/// pool; each cache yields its segments in shuffled batches. The pool order
/// and batch order come from `seed` only.
class HierarchicalSampler {
 public:
  HierarchicalSampler(const TrainCorpus& corpus, std::vector<int> pool, int cache_size, int batch_size,
                      std::uint64_t seed);

  /// Loads the next cache (computing mu2 with `model`); false once the pool is exhausted.
  bool next_cache(Fhvae& model);
  const SequenceCache& cache() const { return cache_; }
  SequenceCache& cache() { return cache_; }
  const std::vector<Batch>& batches() const { return batches_; }
  int caches_drawn() const { return caches_drawn_; }

 private:
  const TrainCorpus& corpus_;
  std::vector<int> pool_;
  std::size_t cursor_ = 0;
  int cache_size_;
  int batch_size_;
  Rng rng_;
  SequenceCache cache_;
  std::vector<Batch> batches_;
  int caches_drawn_ = 0;
};

struct AdamState {
  long step = 0;
  std::vector<Mat> m, v;
};

/// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
class Adam {
 public:
  explicit Adam(double lr = 1e-3) : lr_(lr) {}
  void step(const std::vector<ad::Parameter*>& params);
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  double lr_;
  AdamState state_;
};

enum class Stage { kPretrain, kFinetune };

struct Checkpoint {
  Stage stage = Stage::kPretrain;
  Fhvae model;
  std::optional<Discriminator> disc;
  /// Frozen copy of the pretrained model; only its encoders are used.
  std::optional<Fhvae> reference;
  TrainingConfig train;
  int epoch = 0;  // completed epochs
  long global_step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  bool finished = false;
  std::string norm_stats_path;
  AdamState adam_fhvae;
  AdamState adam_disc;
  /// Parameter values at the best validation epoch (early-stopping runs).
  std::vector<Mat> best_params;
};

TensorArchive to_archive(const Checkpoint& ckpt);
Checkpoint from_archive(const TensorArchive& a);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Side channels of a training run.
struct TrainHooks {
  std::ostream* metrics = nullptr;
  /// When set, latest.ckpt (each epoch) and best.ckpt are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Where the offending batch is written if a loss turns non-finite.
  std::optional<std::filesystem::path> dump_dir;
  /// Return after this many epochs of the current call (for resume tests).
  std::optional<int> stop_after_epochs;
};

/// Per-epoch summary kept for inspection.
struct EpochSummary {
  int epoch = 0;
  double train_total = 0.0;
  double val_total = 0.0;
  double train_lb = 0.0;
  double disc_loss = 0.0;
  double ref_loss = 0.0;
};

struct TrainResult {
  Checkpoint ckpt;
  std::vector<EpochSummary> history;
};

/// Fits a fresh model on control-domain data with lb + w * z2disc and early stopping.
TrainResult pretrain(const TrainCorpus& corpus, const ModelConfig& model_cfg, const PriorConfig& priors,
                     const TrainingConfig& cfg, const TrainHooks& hooks = {});

/// Continues from a pretrained checkpoint with the extensions enabled in cfg.flags.
TrainResult finetune(const Checkpoint& pretrained, const TrainCorpus& corpus, const TrainingConfig& cfg,
                     const TrainHooks& hooks = {});

/// Continues an interrupted run from its latest checkpoint.
TrainResult resume(const Checkpoint& ckpt, const TrainCorpus& corpus, const TrainHooks& hooks = {});

/// Hash of parameter values (used for isolation checks and tests).
std::uint64_t parameter_hash(const std::vector<ad::Parameter*>& params);

/// Mean over the validation sequences of the total objective, with fixed noise.
double validation_loss(Checkpoint& ckpt, const TrainCorpus& corpus, const std::vector<int>& sequences);

/// Sequence indices held out for validation (a seed-determined fraction).
std::vector<int> validation_split(const TrainCorpus& corpus, double fraction, std::uint64_t seed);

}  // namespace fhvae
