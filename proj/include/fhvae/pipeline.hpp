#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fhvae/config.hpp"
#include "fhvae/evalharness.hpp"
#include "fhvae/extract.hpp"
#include "fhvae/trainer.hpp"

namespace fhvae {

/// Feature-extraction methods compared in the synthetic table.
enum class Method { kPretrained, kFinetuned, kAdversarial, kReference, kDysOnly, kDisentangle };
inline constexpr Method kAllMethods[] = {Method::kPretrained, Method::kFinetuned, Method::kAdversarial,
                                         Method::kReference,  Method::kDysOnly,   Method::kDisentangle};
std::string to_string(Method m);
/// Loss flags of the finetuning run behind a method (kPretrained has none).
LossFlags method_flags(Method m);

/// Everything one synthetic experiment seed needs.
struct SynthExperimentConfig {
  std::uint64_t seed = 0;
  SynthConfig pretrain_corpus;
  SynthConfig finetune_corpus;
  SynthConfig eval_corpus;
  ModelConfig model;
  PriorConfig priors;
  TrainingConfig pretrain;
  TrainingConfig finetune;
  EvalOptions eval;
  int extract_shift = 1;
  int n_folds = 6;
  int repeats = 5;
  double ood_threshold = 70.0;
  /// Segments pooled per example of the sequence-identity probe.
  int seqid_chunk = 10;

  void validate() const;
};

/// Desk-scale defaults: small model and corpora sharing one random world.
SynthExperimentConfig default_synth_experiment(std::uint64_t seed);

/// Flat view of an experiment. Prefixes: model., priors., pretrain., finetune.,
/// pretrain_corpus., finetune_corpus., eval_corpus., probe., intent.,
/// experiment.
KeyValues experiment_to_kv(const SynthExperimentConfig& cfg);
/// Applies overrides; `corpus.<field>` sets the field on all three corpora.
/// Unknown keys raise ConfigError.
void apply_experiment_overrides(SynthExperimentConfig& cfg, const KeyValues& kv);

/// Copy of `cfg` with every seed-derived field recomputed for `seed`.
SynthExperimentConfig reseeded(SynthExperimentConfig cfg, std::uint64_t seed);

struct MethodScores {
  Method method = Method::kPretrained;
  double ood_f1 = 0.0;
  double indomain_f1 = 0.0;
  double probe_z1 = 0.0;
  double probe_z2 = 0.0;
  double probe_z12 = 0.0;
  /// Sum of squared Pearson correlations between mu_z1 and mu_z2 columns
  /// over all extracted evaluation segments.
  double cross_corr = 0.0;
  // Wall-clock seconds of the finetuning run, feature extraction, the z1 and
  // z2 domain probes and the intent protocols.
  double train_seconds = 0.0;
  double extract_seconds = 0.0;
  double probe_seconds = 0.0;
  double intent_seconds = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<MethodScores> rows;
  /// Raw filter-bank baseline (no model).
  double fbank_ood_f1 = 0.0;
  double fbank_indomain_f1 = 0.0;
  double fbank_probe = 0.0;
  /// Sequence-identity probe accuracy from pooled mu_z1 / mu_z2 of the
  /// pretrained model on control evaluation sequences.
  double seqid_z1 = 0.0;
  double seqid_z2 = 0.0;
  double pretrain_seconds = 0.0;

  const MethodScores& row(Method m) const;
};

struct ExperimentOptions {
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  bool intent = true;
  bool probes = true;
  bool seqid = true;
  bool fbank = true;
  /// Training metrics are written here when set.
  std::ostream* metrics = nullptr;
  /// Progress lines are written here when set.
  std::ostream* progress = nullptr;
};

SeedResult run_synth_seed(const SynthExperimentConfig& cfg, const ExperimentOptions& opts = {});

/// Sequence-identity accuracy: each sequence's segment vectors are cut into
/// chunks of `chunk` consecutive rows, chunk means are the examples, even
/// chunks train and odd chunks test.
double sequence_identity_accuracy(const std::vector<Mat>& per_sequence, int chunk, const ProbeConfig& cfg);

/// Sum of squared Pearson correlations between columns of a and b (constant
/// columns skipped).
double cross_correlation_energy(const Mat& a, const Mat& b);

/// Method rows x {ood-F1, indomain-F1, probe z1, z2, z12}: per-seed values,
/// then mean (and sample standard deviation when more than one seed).
std::string render_grid(const std::vector<SeedResult>& results);

/// Runs every seed, writes grid.tsv, per-seed metrics logs and a summary
/// under out_dir, and returns the grid text.
std::string reproduce_synthetic_table(const std::filesystem::path& out_dir, const std::vector<std::uint64_t>& seeds,
                                      const SynthExperimentConfig* base = nullptr, std::ostream* progress = nullptr,
                                      const ExperimentOptions* options = nullptr);

}  // namespace fhvae
