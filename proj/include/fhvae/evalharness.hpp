#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fhvae/corpus.hpp"
#include "fhvae/nn.hpp"

namespace fhvae {

enum class Protocol { kOutOfDomain, kInDomain, kKfold };
Protocol protocol_from_string(const std::string& s);
std::string to_string(Protocol p);

enum class InputKind { kFbank, kZ1, kZ2, kZ12 };
InputKind input_kind_from_string(const std::string& s);
std::string to_string(InputKind k);

struct SplitSpec {
  Protocol mode = Protocol::kOutOfDomain;
  double threshold = 70.0;
  int n_folds = 6;
  int repeats = 5;

  void validate() const;
};

struct SpeakerSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Speakers with intelligibility >= threshold train, the rest test.
SpeakerSplit split_out_of_domain(std::span<const SpeakerMeta> speakers, double threshold = 70.0);

/// Ranks by intelligibility (descending, ties by speaker id); odd ranks train.
SpeakerSplit split_in_domain(std::span<const SpeakerMeta> speakers);

/// One labelled utterance as seen by the fold builder.
struct UttRef {
  std::string speaker_id;
  Domain domain = Domain::kControl;
};

struct Fold {
  std::vector<int> train, val, test;  // utterance indices
};

struct KfoldPlan {
  std::vector<std::vector<std::string>> blocks;  // speaker ids per block
  std::vector<int> block_of_utt;
  std::vector<Fold> folds;
};

/// Speaker-disjoint blocks, each domain packed greedily (largest speaker
/// first into the block with the fewest utterances of that domain). Fold f
/// tests on block f, validates on block f+1 and trains on the rest.
KfoldPlan kfold_blocks(std::span<const UttRef> utts, int n_folds, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Classifiers
// ---------------------------------------------------------------------------
struct ProbeConfig {
  int hidden = 100;
  int batch_size = 128;
  double lr = 1e-3;
  int epochs = 100;
  std::uint64_t seed = 0;
};

/// Dense (rectifier) -> softmax over n_classes, on z-scored inputs.
class Probe {
 public:
  Probe() = default;
  std::vector<int> predict(const Mat& x);
  double accuracy(const Mat& x, const std::vector<int>& y);

 private:
  friend Probe train_probe(const Mat&, const std::vector<int>&, int, const ProbeConfig&, const Mat*,
                           const std::vector<int>*);
  Mat forward_logits(const Mat& x);
  NormStats stats_;
  nn::Dense hidden_, out_;
};

/// Trains with cross-entropy. With a validation set the parameters of the
/// epoch with the best validation accuracy are kept.
Probe train_probe(const Mat& x, const std::vector<int>& y, int n_classes, const ProbeConfig& cfg,
                  const Mat* x_val = nullptr, const std::vector<int>* y_val = nullptr);

struct IntentConfig {
  int hidden = 32;
  int batch_size = 16;
  double lr = 3e-3;
  int epochs = 30;
  double threshold = 0.5;
  /// Use every stride-th row of each input sequence.
  int stride = 1;
  std::uint64_t seed = 0;
};

using LabelSet = std::vector<int>;

/// Unidirectional LSTM, mean over time, per-label logistic outputs.
class IntentModel {
 public:
  IntentModel() = default;
  std::vector<LabelSet> predict(const std::vector<Mat>& sequences);

 private:
  friend IntentModel train_intent_model(const std::vector<Mat>&, const std::vector<LabelSet>&, int,
                                        const IntentConfig&);
  Mat probabilities(const std::vector<const Mat*>& batch, int steps);
  NormStats stats_;
  nn::LstmWeights rnn_;
  nn::Dense out_;
  IntentConfig cfg_;
};

IntentModel train_intent_model(const std::vector<Mat>& sequences, const std::vector<LabelSet>& labels, int n_labels,
                               const IntentConfig& cfg);

/// 2TP / (2TP + FP + FN) with counts pooled over labels and utterances.
double micro_f1(const std::vector<LabelSet>& predicted, const std::vector<LabelSet>& truth);

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------
/// Per-utterance inputs to the evaluation protocols.
struct EvalData {
  std::vector<std::string> utterance_ids;
  std::vector<std::string> speaker_ids;
  std::vector<LabelSet> labels;
  std::map<std::string, SpeakerMeta> speakers;
  int n_labels = 0;
  /// Per-utterance sequences (frames for fbank, per-segment means for z1/z2).
  std::map<InputKind, std::vector<Mat>> inputs;

  std::size_t size() const { return utterance_ids.size(); }
  Domain domain_of(std::size_t i) const;
  /// Sequences for `kind`; z12 is assembled from z1 and z2 when not stored.
  std::vector<Mat> sequences(InputKind kind) const;
};

struct EvalOptions {
  ProbeConfig probe;
  IntentConfig intent;
};

struct EvalReport {
  Protocol protocol = Protocol::kOutOfDomain;
  InputKind input = InputKind::kZ1;
  std::vector<double> scores;  // one per repeat
  double mean = 0.0;
  std::map<std::string, double> per_speaker;  // mean over repeats

  /// Tab-separated table rows.
  std::string table() const;
  std::string summary() const;
};

/// Intent micro-F1 for ood/indomain, domain-probe accuracy for kfold.
/// Repeat r uses seed r for every random choice.
EvalReport run_eval_suite(const EvalData& data, InputKind input, const SplitSpec& spec, const EvalOptions& opts = {});

/// Pooled (mean over rows) vectors, one row per sequence.
Mat pool_rows(const std::vector<Mat>& sequences);

/// Column-concatenation of matching z1 and z2 sequences.
std::vector<Mat> concat_inputs(const std::vector<Mat>& a, const std::vector<Mat>& b);

}  // namespace fhvae
