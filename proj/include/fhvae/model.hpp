#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fhvae/corpus.hpp"
#include "fhvae/nn.hpp"

namespace fhvae {

/// Prior variances of z1 ~ N(0, var_z1 I), z2 ~ N(mu2, var_z2 I), mu2 ~ N(0, var_mu2 I).
struct PriorConfig {
  double var_z1 = 1.0;
  double var_z2 = 0.25;
  double var_mu2 = 1.0;

  void validate() const;
};

struct ModelConfig {
  int feat_dim = 80;
  int seg_len = 20;
  int hidden = 256;
  int layers = 2;
  int z1_dim = 32;
  int z2_dim = 32;
  int disc_hidden = 32;
  double disc_leak = 0.2;
  /// Log-variance heads are clamped to [-limit, limit].
  double logvar_limit = 10.0;

  void validate() const;
};

/// Diagonal Gaussian given by mean and log-variance.
struct GaussianPosterior {
  Vec mean;
  Vec logvar;
};

/// Per-frame observation model of one segment (seg_len x feat_dim each).
struct FrameGaussian {
  Mat mean;
  Mat logvar;
};

/// Batched posterior inside a graph: both B x dim.
struct GaussVars {
  ad::Var mean;
  ad::Var logvar;
};

/// Stacks segments (each seg_len x D) into the time-major layout used by the
/// recurrent layers: row t*B + b holds frame t of segment b.
Mat pack_segments(std::span<const Mat* const> segments);
Mat pack_segments(std::span<const SegmentRecord> segments);
/// Frames of segment b from a time-major block.
Mat unpack_segment(const Mat& packed, int steps, int batch, int b);

struct Encoder {
  nn::BiLstmStack rnn;
  nn::Dense mean_head, logvar_head;

  Encoder() = default;
  Encoder(const std::string& name, int in, const ModelConfig& cfg, int latent, Rng& rng);
  GaussVars operator()(const nn::Binder& bind, const ad::Var& x, int steps, int batch, double limit);
  void collect(std::vector<ad::Parameter*>& out);
};

struct Decoder {
  nn::BiLstmStack rnn;
  nn::Dense mean_head, logvar_head;

  Decoder() = default;
  Decoder(const std::string& name, const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<ad::Parameter*>& out);
};

/// Factorized hierarchical VAE: z2 (sequence-scale) encoder, z1 (segment-scale)
/// encoder conditioned on z2, and a recurrent decoder fed [z1, z2] at every frame.
class Fhvae {
 public:
  Fhvae() = default;
  Fhvae(const ModelConfig& cfg, const PriorConfig& priors, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const PriorConfig& priors() const { return priors_; }
  void set_priors(const PriorConfig& p);

  // Graph-level forward passes. `x` is time-major (seg_len*batch x feat_dim).
  GaussVars encode_z2(const nn::Binder& bind, const ad::Var& x, int batch);
  /// z2 (batch x z2_dim) is concatenated to every input frame.
  GaussVars encode_z1(const nn::Binder& bind, const ad::Var& x, const ad::Var& z2, int batch);
  /// Returns time-major (seg_len*batch x feat_dim) mean and log-variance.
  GaussVars decode(const nn::Binder& bind, const ad::Var& z1, const ad::Var& z2, int batch);

  // Value-level helpers (no gradient tracking).
  GaussianPosterior encode_z2(const Mat& segment);
  GaussianPosterior encode_z1(const Mat& segment, const Vec& z2);
  FrameGaussian decode(const Vec& z1, const Vec& z2);
  /// Posterior means of z2 and then z1 (conditioned on the z2 mean) for a
  /// packed batch: returns {mu_z1, mu_z2}, each batch x dim.
  std::pair<Mat, Mat> posterior_means(const Mat& packed, int batch);
  /// mu_z2 only, batch x z2_dim.
  Mat z2_means(const Mat& packed, int batch);

  std::vector<ad::Parameter*> parameters();
  /// Parameters of both encoders (the part copied into a frozen reference).
  std::vector<ad::Parameter*> encoder_parameters();

 private:
  ModelConfig cfg_;
  PriorConfig priors_;
  Encoder enc_z2_;
  Encoder enc_z1_;
  Decoder dec_;
};

/// Two-layer domain classifier on mu_z1: dense (leaky rectifier) then a
/// single logistic output read as P(dysarthric).
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const ModelConfig& cfg, std::uint64_t seed);

  ad::Var logit(const nn::Binder& bind, const ad::Var& mu_z1);
  ad::Var probability(const nn::Binder& bind, const ad::Var& mu_z1);
  double discriminate(const Vec& mu_z1);
  std::vector<ad::Parameter*> parameters();

 private:
  nn::Dense hidden_;
  nn::Dense out_;
  double leak_ = 0.2;
};

/// mean + exp(logvar / 2) * noise.
Vec reparam_sample(const GaussianPosterior& q, const Vec& noise);
ad::Var reparam_sample(const GaussVars& q, const Mat& noise);

/// Shrunk sequence-level mean: sum of the z2 encoder means divided by
/// (N + var_z2 / var_mu2). Rows of `enc_means` are the N segment means.
Vec infer_seq_mean(const Mat& enc_means, const PriorConfig& priors);
Vec infer_seq_mean(std::span<const Vec> enc_means, const PriorConfig& priors);

}  // namespace fhvae
