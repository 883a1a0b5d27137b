#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fhvae/model.hpp"

namespace fhvae {

struct LossWeights {
  double z2_disc = 10.0;
  double gen = 500.0;
  double ref = 0.1;
  double dstg = 1.0;

  void validate() const;
};

struct LossFlags {
  bool adversarial = false;
  bool reference = false;
  bool gen_dys_only = false;
  bool disentangle = false;
  /// Reference loss as KL(current || reference) instead of KL(reference || current).
  bool reference_reverse_kl = false;
};

enum class GenMode { kBoth, kDysOnly };

/// Unweighted loss components of one batch.
struct LossComponents {
  double lb = 0.0;
  double z2_disc = 0.0;
  double gen = 0.0;
  double ref = 0.0;
  double dstg = 0.0;
};

struct LossReport {
  double lb_loss = 0.0;
  double z2_disc_loss = 0.0;
  double gen_loss = 0.0;
  double ref_loss = 0.0;
  double dstg_loss = 0.0;
  double total = 0.0;
  double disc_loss = 0.0;
  std::uint64_t clamp_events = 0;

  /// One metrics-log line: space separated key=value pairs.
  std::string format(long step, int epoch) const;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside the
/// cross-entropy terms; every clamped entry increments a global counter.
inline constexpr double kProbClamp = 1e-7;
std::uint64_t prob_clamp_events() noexcept;

// ---------------------------------------------------------------------------
// Graph-level terms. Row-wise functions return one value per batch row (B x 1).
// ---------------------------------------------------------------------------
namespace graph {

/// KL(N(q_mean, exp(q_logvar)) || N(p_mean, exp(p_logvar))) per row.
ad::Var kl_diag_gauss(const ad::Var& q_mean, const ad::Var& q_logvar, const ad::Var& p_mean, const ad::Var& p_logvar);

/// Negative Gaussian log-likelihood of a time-major batch, summed over frames
/// and dimensions: one value per segment.
ad::Var gaussian_nll(const ad::Var& x, const ad::Var& mean, const ad::Var& logvar, int steps, int batch);

/// Per-segment negative variational lower bound. `mu2` holds the sequence
/// means for each row (B x z2_dim, constants) and `seg_counts` the number of
/// segments N_i of each row's sequence.
ad::Var lower_bound(const ad::Var& x, const GaussVars& recon, const GaussVars& q_z1, const GaussVars& q_z2,
                    const Mat& mu2, const Vec& seg_counts, const PriorConfig& priors, int steps, int batch);

/// Sequence-discriminative loss: -log softmax_j(-||z2 - mu2_j||^2 / (2 var_z2))
/// at j = own index, over the cached table (K x z2_dim).
ad::Var z2_disc(const ad::Var& z2, const Mat& mu2_table, const std::vector<int>& own, const PriorConfig& priors);

/// Binary cross-entropy per row against labels in {0, 1}.
ad::Var bce(const ad::Var& p, const std::vector<int>& labels);

/// Sum over present domains of the per-domain mean cross-entropy
/// (CE_dys + CE_ctrl), 1 x 1.
ad::Var disc_loss(const ad::Var& p, const std::vector<int>& labels);

/// Cross-entropy against the flipped labels (kBoth) or against label 0 on the
/// dysarthric rows only (kDysOnly), reduced like disc_loss.
ad::Var gen_loss(const ad::Var& p, const std::vector<int>& labels, GenMode mode);

/// KL between the frozen reference posterior and the current one on control
/// rows, 0 on dysarthric rows; batch mean, 1 x 1.
ad::Var reference_loss(const GaussVars& q_now, const Mat& frozen_mean, const Mat& frozen_logvar,
                       const std::vector<int>& labels, bool reverse_kl = false);

/// Sum of squared Pearson correlations between the columns of mu_z1 and
/// mu_z2 over the batch, 1 x 1. Columns with zero variance are excluded.
ad::Var disentangle_loss(const ad::Var& mu_z1, const ad::Var& mu_z2);

}  // namespace graph

// ---------------------------------------------------------------------------
// Value-level operations.
// ---------------------------------------------------------------------------
double kl_diag_gauss(const GaussianPosterior& q, const Vec& p_mean, const Vec& p_var);

/// Negative lower bound of one segment.
double lower_bound_loss(const Mat& x, const FrameGaussian& recon, const GaussianPosterior& q_z1,
                        const GaussianPosterior& q_z2, const Vec& mu2, const PriorConfig& priors, int n_segments);

/// Convenience form that decodes (z1_sample, z2_sample) with `model`.
double lower_bound_loss(Fhvae& model, const Mat& x, const GaussianPosterior& q_z1, const GaussianPosterior& q_z2,
                        const Vec& z1_sample, const Vec& z2_sample, const Vec& mu2, int n_segments);

/// `mu2_table` rows are the cached sequences' mu2 estimates.
double z2_disc_loss(const Vec& z2_sample, int own_index, const Mat& mu2_table, const PriorConfig& priors);

double disc_loss(double p, int label);
double gen_loss(double p, int label, GenMode mode);
double reference_loss(const GaussianPosterior& q_now, const GaussianPosterior& q_frozen, int label,
                      bool reverse_kl = false);
double disentangle_loss(const Mat& mu_z1, const Mat& mu_z2);

/// Weighted sum; terms disabled by `flags` contribute exactly zero.
LossReport total_fhvae_loss(const LossComponents& c, const LossWeights& w, const LossFlags& flags);

}  // namespace fhvae
