#include "fhvae/losses.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace fhvae {

namespace {

std::atomic<std::uint64_t> g_clamps{0};
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

Mat column(const std::vector<int>& labels) {
  Mat m(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, "labels must be 0 or 1");
    m(static_cast<Eigen::Index>(i), 0) = labels[i];
  }
  return m;
}

// Row weights implementing CE_dys + CE_ctrl: each present domain's rows are
// averaged separately. `use_ctrl` false drops the control rows.
Mat domain_weights(const std::vector<int>& labels, bool use_ctrl) {
  double n_dys = 0, n_ctrl = 0;
  for (int l : labels) (l == 1 ? n_dys : n_ctrl) += 1;
  Mat w(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) w(static_cast<Eigen::Index>(i), 0) = 1.0 / n_dys;
    else w(static_cast<Eigen::Index>(i), 0) = use_ctrl ? 1.0 / n_ctrl : 0.0;
  }
  return w;
}

}  // namespace

void LossWeights::validate() const {
  if (!(z2_disc >= 0.0 && gen >= 0.0 && ref >= 0.0 && dstg >= 0.0))
    throw ConfigError("loss weights must be non-negative");
}

std::uint64_t prob_clamp_events() noexcept { return g_clamps.load(std::memory_order_relaxed); }

std::string LossReport::format(long step, int epoch) const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "step=%ld epoch=%d lb=%.17g z2disc=%.17g gen=%.17g ref=%.17g dstg=%.17g total=%.17g disc=%.17g "
                "clamps=%llu",
                step, epoch, lb_loss, z2_disc_loss, gen_loss, ref_loss, dstg_loss, total, disc_loss,
                static_cast<unsigned long long>(clamp_events));
  return buf;
}

namespace graph {

ad::Var kl_diag_gauss(const ad::Var& q_mean, const ad::Var& q_logvar, const ad::Var& p_mean, const ad::Var& p_logvar) {
  const ad::Var inv_p = ad::exp(ad::neg(p_logvar));
  const ad::Var spread = ad::add(ad::exp(q_logvar), ad::square(ad::sub(q_mean, p_mean)));
  const ad::Var terms = ad::add_scalar(ad::add(ad::sub(p_logvar, q_logvar), ad::mul(spread, inv_p)), -1.0);
  return ad::scale(ad::row_sum(terms), 0.5);
}

ad::Var gaussian_nll(const ad::Var& x, const ad::Var& mean, const ad::Var& logvar, int steps, int batch) {
  const ad::Var sq = ad::mul(ad::square(ad::sub(x, mean)), ad::exp(ad::neg(logvar)));
  const ad::Var per_frame = ad::row_sum(ad::add_scalar(ad::add(logvar, sq), kLog2Pi));
  return ad::scale(ad::time_mean(per_frame, steps, batch), 0.5 * steps);
}

ad::Var lower_bound(const ad::Var& x, const GaussVars& recon, const GaussVars& q_z1, const GaussVars& q_z2,
                    const Mat& mu2, const Vec& seg_counts, const PriorConfig& priors, int steps, int batch) {
  require(mu2.rows() == batch && seg_counts.size() == batch, "lower_bound: one mu2 and count per row required");
  ad::Graph& g = x.graph();
  const Eigen::Index d1 = q_z1.mean.cols(), d2 = q_z2.mean.cols();
  const ad::Var nll = gaussian_nll(x, recon.mean, recon.logvar, steps, batch);
  const ad::Var kl1 = kl_diag_gauss(q_z1.mean, q_z1.logvar, g.constant(Mat::Zero(batch, d1)),
                                    g.constant(Mat::Constant(batch, d1, std::log(priors.var_z1))));
  const ad::Var kl2 = kl_diag_gauss(q_z2.mean, q_z2.logvar, g.constant(mu2),
                                    g.constant(Mat::Constant(batch, d2, std::log(priors.var_z2))));
  // log N(mu2; 0, var_mu2 I) / N_i, constant with respect to the parameters.
  Mat log_p_mu2(batch, 1);
  for (int b = 0; b < batch; ++b) {
    require(seg_counts(b) >= 1, "lower_bound: segment counts must be >= 1");
    const double lp = -0.5 * (d2 * (kLog2Pi + std::log(priors.var_mu2)) + mu2.row(b).squaredNorm() / priors.var_mu2);
    log_p_mu2(b, 0) = lp / seg_counts(b);
  }
  return ad::sub(ad::add(ad::add(nll, kl1), kl2), g.constant(log_p_mu2));
}

ad::Var z2_disc(const ad::Var& z2, const Mat& mu2_table, const std::vector<int>& own, const PriorConfig& priors) {
  ad::Graph& g = z2.graph();
  require(mu2_table.cols() == z2.cols(), "z2_disc: table dimension mismatch");
  require(static_cast<Eigen::Index>(own.size()) == z2.rows(), "z2_disc: one index per row required");
  if (mu2_table.rows() < 2) {
    warn("z2_disc: fewer than two cached sequences; loss is zero");
    return g.constant(Mat::Zero(z2.rows(), 1));
  }
  const ad::Var cross = ad::matmul(z2, g.constant(mu2_table.transpose()));
  const ad::Var zz = ad::row_sum(ad::square(z2));
  const Mat mm = mu2_table.rowwise().squaredNorm().transpose();
  const ad::Var dist = ad::add_rowvec(ad::add_colvec(ad::scale(cross, -2.0), zz), g.constant(mm));
  const ad::Var logits = ad::scale(dist, -0.5 / priors.var_z2);
  return ad::neg(ad::pick(ad::log_softmax_rows(logits), own));
}

ad::Var bce(const ad::Var& p, const std::vector<int>& labels) {
  ad::Graph& g = p.graph();
  require(p.cols() == 1 && p.rows() == static_cast<Eigen::Index>(labels.size()), "bce: one label per row required");
  const Mat l = column(labels);
  std::uint64_t clamped = 0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double v = p.value()(r, 0);
    if (!(v >= kProbClamp && v <= 1.0 - kProbClamp)) ++clamped;
  }
  if (clamped) g_clamps.fetch_add(clamped, std::memory_order_relaxed);
  const ad::Var pc = ad::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const ad::Var pos = ad::mul(g.constant(l), ad::log(pc));
  const ad::Var negl = ad::mul(g.constant((1.0 - l.array()).matrix()), ad::log(ad::add_scalar(ad::neg(pc), 1.0)));
  return ad::neg(ad::add(pos, negl));
}

ad::Var disc_loss(const ad::Var& p, const std::vector<int>& labels) {
  return ad::sum(ad::mul(bce(p, labels), p.graph().constant(domain_weights(labels, true))));
}

ad::Var gen_loss(const ad::Var& p, const std::vector<int>& labels, GenMode mode) {
  ad::Graph& g = p.graph();
  if (mode == GenMode::kBoth) {
    std::vector<int> flipped(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) flipped[i] = 1 - labels[i];
    return ad::sum(ad::mul(bce(p, flipped), g.constant(domain_weights(labels, true))));
  }
  const std::vector<int> zeros(labels.size(), 0);
  return ad::sum(ad::mul(bce(p, zeros), g.constant(domain_weights(labels, false))));
}

ad::Var reference_loss(const GaussVars& q_now, const Mat& frozen_mean, const Mat& frozen_logvar,
                       const std::vector<int>& labels, bool reverse_kl) {
  ad::Graph& g = q_now.mean.graph();
  const ad::Var fm = g.constant(frozen_mean), fl = g.constant(frozen_logvar);
  const ad::Var kl = reverse_kl ? kl_diag_gauss(q_now.mean, q_now.logvar, fm, fl)
                                : kl_diag_gauss(fm, fl, q_now.mean, q_now.logvar);
  const Mat ctrl = (1.0 - column(labels).array()).matrix() / static_cast<double>(labels.size());
  return ad::sum(ad::mul(kl, g.constant(ctrl)));
}

ad::Var disentangle_loss(const ad::Var& mu_z1, const ad::Var& mu_z2) {
  require(mu_z1.rows() == mu_z2.rows(), "disentangle_loss: batch sizes differ");
  require(mu_z1.rows() >= 3, "disentangle_loss: batch of at least 3 required");
  ad::Graph& g = mu_z1.graph();
  auto normalized = [&g](const ad::Var& m) {
    const ad::Var centered = ad::add_rowvec(m, ad::neg(ad::col_mean(m)));
    const ad::Var norm = ad::sqrt(ad::col_sum(ad::square(centered)));
    Mat keep = Mat::Ones(1, m.cols()), guard = Mat::Zero(1, m.cols());
    const double tol = 1e-10 * std::sqrt(static_cast<double>(m.rows()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!(norm.value()(0, c) > tol * (1.0 + m.value().col(c).cwiseAbs().maxCoeff()))) {
        warn("disentangle_loss: column " + std::to_string(c) + " has zero variance; excluded");
        keep(0, c) = 0.0;
        guard(0, c) = 1.0;
      }
    }
    const ad::Var inv = ad::mul(ad::reciprocal(ad::add(norm, g.constant(guard))), g.constant(keep));
    return ad::mul_rowvec(centered, inv);
  };
  const ad::Var corr = ad::matmul_tn(normalized(mu_z1), normalized(mu_z2));
  return ad::sum(ad::square(corr));
}

}  // namespace graph

double kl_diag_gauss(const GaussianPosterior& q, const Vec& p_mean, const Vec& p_var) {
  require(q.mean.size() == q.logvar.size() && q.mean.size() == p_mean.size() && p_mean.size() == p_var.size(),
          "kl_diag_gauss: dimension mismatch");
  require((p_var.array() > 0.0).all(), "kl_diag_gauss: prior variance must be positive");
  ad::Graph g;
  return graph::kl_diag_gauss(g.constant(q.mean.transpose()), g.constant(q.logvar.transpose()),
                              g.constant(p_mean.transpose()), g.constant(p_var.array().log().matrix().transpose()))
      .scalar();
}

double lower_bound_loss(const Mat& x, const FrameGaussian& recon, const GaussianPosterior& q_z1,
                        const GaussianPosterior& q_z2, const Vec& mu2, const PriorConfig& priors, int n_segments) {
  require(recon.mean.rows() == x.rows() && recon.mean.cols() == x.cols() && recon.logvar.rows() == x.rows() &&
              recon.logvar.cols() == x.cols(),
          "lower_bound_loss: reconstruction shape differs from x");
  priors.validate();
  ad::Graph g;
  const GaussVars r{g.constant(recon.mean), g.constant(recon.logvar)};
  const GaussVars q1{g.constant(q_z1.mean.transpose()), g.constant(q_z1.logvar.transpose())};
  const GaussVars q2{g.constant(q_z2.mean.transpose()), g.constant(q_z2.logvar.transpose())};
  Vec counts(1);
  counts(0) = n_segments;
  return graph::lower_bound(g.constant(x), r, q1, q2, mu2.transpose(), counts, priors, static_cast<int>(x.rows()), 1)
      .scalar();
}

double lower_bound_loss(Fhvae& model, const Mat& x, const GaussianPosterior& q_z1, const GaussianPosterior& q_z2,
                        const Vec& z1_sample, const Vec& z2_sample, const Vec& mu2, int n_segments) {
  return lower_bound_loss(x, model.decode(z1_sample, z2_sample), q_z1, q_z2, mu2, model.priors(), n_segments);
}

double z2_disc_loss(const Vec& z2_sample, int own_index, const Mat& mu2_table, const PriorConfig& priors) {
  require(own_index >= 0 && own_index < mu2_table.rows(), "z2_disc_loss: own sequence is not in the cache");
  ad::Graph g;
  return graph::z2_disc(g.constant(z2_sample.transpose()), mu2_table, {own_index}, priors).scalar();
}

double disc_loss(double p, int label) {
  ad::Graph g;
  return graph::disc_loss(g.constant(Mat::Constant(1, 1, p)), {label}).scalar();
}

double gen_loss(double p, int label, GenMode mode) {
  ad::Graph g;
  return graph::gen_loss(g.constant(Mat::Constant(1, 1, p)), {label}, mode).scalar();
}

double reference_loss(const GaussianPosterior& q_now, const GaussianPosterior& q_frozen, int label, bool reverse_kl) {
  require(label == 0 || label == 1, "reference_loss: label must be 0 or 1");
  ad::Graph g;
  const GaussVars now{g.constant(q_now.mean.transpose()), g.constant(q_now.logvar.transpose())};
  return graph::reference_loss(now, q_frozen.mean.transpose(), q_frozen.logvar.transpose(), {label}, reverse_kl)
      .scalar();
}

double disentangle_loss(const Mat& mu_z1, const Mat& mu_z2) {
  ad::Graph g;
  return graph::disentangle_loss(g.constant(mu_z1), g.constant(mu_z2)).scalar();
}

LossReport total_fhvae_loss(const LossComponents& c, const LossWeights& w, const LossFlags& flags) {
  w.validate();
  LossReport r;
  r.lb_loss = c.lb;
  r.z2_disc_loss = c.z2_disc;
  r.gen_loss = flags.adversarial ? c.gen : 0.0;
  r.ref_loss = flags.reference ? c.ref : 0.0;
  r.dstg_loss = flags.disentangle ? c.dstg : 0.0;
  r.total = r.lb_loss + w.z2_disc * r.z2_disc_loss + w.gen * r.gen_loss + w.ref * r.ref_loss + w.dstg * r.dstg_loss;
  return r;
}

}  // namespace fhvae
