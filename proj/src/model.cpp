#include "fhvae/model.hpp"

#include <cmath>

namespace fhvae {

void PriorConfig::validate() const {
  if (!(var_z1 > 0.0 && var_z2 > 0.0 && var_mu2 > 0.0))
    throw ConfigError("prior variances var_z1, var_z2, var_mu2 must be strictly positive");
}

void ModelConfig::validate() const {
  if (feat_dim < 1 || seg_len < 1 || hidden < 1 || layers < 1 || z1_dim < 1 || z2_dim < 1 || disc_hidden < 1)
    throw ConfigError("model dimensions must all be >= 1");
  if (!(logvar_limit > 0.0)) throw ConfigError("logvar_limit must be positive");
  if (!(disc_leak >= 0.0 && disc_leak < 1.0)) throw ConfigError("disc_leak must lie in [0, 1)");
}

Mat pack_segments(std::span<const Mat* const> segments) {
  require(!segments.empty(), "pack_segments: no segments");
  const Eigen::Index steps = segments.front()->rows(), dim = segments.front()->cols();
  const auto batch = static_cast<Eigen::Index>(segments.size());
  Mat out(steps * batch, dim);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Mat& s = *segments[b];
    require(s.rows() == steps && s.cols() == dim, "pack_segments: segments differ in shape");
    for (Eigen::Index t = 0; t < steps; ++t) out.row(t * batch + b) = s.row(t);
  }
  return out;
}

Mat pack_segments(std::span<const SegmentRecord> segments) {
  std::vector<const Mat*> ptrs;
  ptrs.reserve(segments.size());
  for (const auto& s : segments) ptrs.push_back(&s.x);
  return pack_segments(std::span<const Mat* const>(ptrs));
}

Mat unpack_segment(const Mat& packed, int steps, int batch, int b) {
  Mat out(steps, packed.cols());
  for (int t = 0; t < steps; ++t) out.row(t) = packed.row(static_cast<Eigen::Index>(t) * batch + b);
  return out;
}

Encoder::Encoder(const std::string& name, int in, const ModelConfig& cfg, int latent, Rng& rng)
    : rnn(name + "/rnn", in, cfg.hidden, cfg.layers, rng),
      mean_head(name + "/mean", 2 * cfg.hidden, latent, rng),
      logvar_head(name + "/logvar", 2 * cfg.hidden, latent, rng) {}

GaussVars Encoder::operator()(const nn::Binder& bind, const ad::Var& x, int steps, int batch, double limit) {
  const ad::Var h = rnn.summary(rnn(bind, x, steps, batch), steps, batch);
  return {mean_head(bind, h), ad::clamp(logvar_head(bind, h), -limit, limit)};
}

void Encoder::collect(std::vector<ad::Parameter*>& out) {
  rnn.collect(out);
  mean_head.collect(out);
  logvar_head.collect(out);
}

Decoder::Decoder(const std::string& name, const ModelConfig& cfg, Rng& rng)
    : rnn(name + "/rnn", cfg.z1_dim + cfg.z2_dim, cfg.hidden, cfg.layers, rng),
      mean_head(name + "/mean", 2 * cfg.hidden, cfg.feat_dim, rng),
      logvar_head(name + "/logvar", 2 * cfg.hidden, cfg.feat_dim, rng) {}

void Decoder::collect(std::vector<ad::Parameter*>& out) {
  rnn.collect(out);
  mean_head.collect(out);
  logvar_head.collect(out);
}

Fhvae::Fhvae(const ModelConfig& cfg, const PriorConfig& priors, std::uint64_t seed) : cfg_(cfg), priors_(priors) {
  cfg_.validate();
  priors_.validate();
  Rng rng(derive_seed(seed, Stream::kInit));
  enc_z2_ = Encoder("enc_z2", cfg.feat_dim, cfg, cfg.z2_dim, rng);
  enc_z1_ = Encoder("enc_z1", cfg.feat_dim + cfg.z2_dim, cfg, cfg.z1_dim, rng);
  dec_ = Decoder("dec", cfg, rng);
}

void Fhvae::set_priors(const PriorConfig& p) {
  p.validate();
  priors_ = p;
}

GaussVars Fhvae::encode_z2(const nn::Binder& bind, const ad::Var& x, int batch) {
  require(x.cols() == cfg_.feat_dim && x.rows() == static_cast<Eigen::Index>(cfg_.seg_len) * batch,
          "encode_z2: input must be seg_len*batch x feat_dim");
  return enc_z2_(bind, x, cfg_.seg_len, batch, cfg_.logvar_limit);
}

GaussVars Fhvae::encode_z1(const nn::Binder& bind, const ad::Var& x, const ad::Var& z2, int batch) {
  require(x.cols() == cfg_.feat_dim && x.rows() == static_cast<Eigen::Index>(cfg_.seg_len) * batch,
          "encode_z1: input must be seg_len*batch x feat_dim");
  require(z2.rows() == batch && z2.cols() == cfg_.z2_dim, "encode_z1: z2 must be batch x z2_dim");
  const ad::Var in = ad::concat_cols({x, ad::tile_rows(z2, cfg_.seg_len)});
  return enc_z1_(bind, in, cfg_.seg_len, batch, cfg_.logvar_limit);
}

GaussVars Fhvae::decode(const nn::Binder& bind, const ad::Var& z1, const ad::Var& z2, int batch) {
  require(z1.rows() == batch && z1.cols() == cfg_.z1_dim, "decode: z1 must be batch x z1_dim");
  require(z2.rows() == batch && z2.cols() == cfg_.z2_dim, "decode: z2 must be batch x z2_dim");
  const ad::Var in = ad::tile_rows(ad::concat_cols({z1, z2}), cfg_.seg_len);
  const ad::Var h = dec_.rnn(bind, in, cfg_.seg_len, batch);
  return {dec_.mean_head(bind, h), ad::clamp(dec_.logvar_head(bind, h), -cfg_.logvar_limit, cfg_.logvar_limit)};
}

GaussianPosterior Fhvae::encode_z2(const Mat& segment) {
  ad::Graph g;
  const nn::Binder bind(g, false);
  const auto q = encode_z2(bind, g.constant(segment), 1);
  return {q.mean.value().row(0).transpose(), q.logvar.value().row(0).transpose()};
}

GaussianPosterior Fhvae::encode_z1(const Mat& segment, const Vec& z2) {
  require(z2.size() == cfg_.z2_dim && z2.allFinite(), "encode_z1: z2 must be finite with z2_dim entries");
  ad::Graph g;
  const nn::Binder bind(g, false);
  const auto q = encode_z1(bind, g.constant(segment), g.constant(z2.transpose()), 1);
  return {q.mean.value().row(0).transpose(), q.logvar.value().row(0).transpose()};
}

FrameGaussian Fhvae::decode(const Vec& z1, const Vec& z2) {
  require(z1.allFinite() && z2.allFinite(), "decode: latents must be finite");
  ad::Graph g;
  const nn::Binder bind(g, false);
  const auto p = decode(bind, g.constant(z1.transpose()), g.constant(z2.transpose()), 1);
  return {p.mean.value(), p.logvar.value()};
}

std::pair<Mat, Mat> Fhvae::posterior_means(const Mat& packed, int batch) {
  ad::Graph g;
  const nn::Binder bind(g, false);
  const ad::Var x = g.constant(packed);
  const auto q2 = encode_z2(bind, x, batch);
  const auto q1 = encode_z1(bind, x, q2.mean, batch);
  return {q1.mean.value(), q2.mean.value()};
}

Mat Fhvae::z2_means(const Mat& packed, int batch) {
  ad::Graph g;
  const nn::Binder bind(g, false);
  return encode_z2(bind, g.constant(packed), batch).mean.value();
}

std::vector<ad::Parameter*> Fhvae::parameters() {
  std::vector<ad::Parameter*> out;
  enc_z2_.collect(out);
  enc_z1_.collect(out);
  dec_.collect(out);
  return out;
}

std::vector<ad::Parameter*> Fhvae::encoder_parameters() {
  std::vector<ad::Parameter*> out;
  enc_z2_.collect(out);
  enc_z1_.collect(out);
  return out;
}

Discriminator::Discriminator(const ModelConfig& cfg, std::uint64_t seed) : leak_(cfg.disc_leak) {
  Rng rng(derive_seed(seed, Stream::kDiscInit));
  hidden_ = nn::Dense("disc/hidden", cfg.z1_dim, cfg.disc_hidden, rng);
  out_ = nn::Dense("disc/out", cfg.disc_hidden, 1, rng);
}

ad::Var Discriminator::logit(const nn::Binder& bind, const ad::Var& mu_z1) {
  return out_(bind, ad::leaky_relu(hidden_(bind, mu_z1), leak_));
}

ad::Var Discriminator::probability(const nn::Binder& bind, const ad::Var& mu_z1) {
  return ad::sigmoid(logit(bind, mu_z1));
}

double Discriminator::discriminate(const Vec& mu_z1) {
  require(mu_z1.allFinite(), "discriminate: input must be finite");
  ad::Graph g;
  const nn::Binder bind(g, false);
  return probability(bind, g.constant(mu_z1.transpose())).scalar();
}

std::vector<ad::Parameter*> Discriminator::parameters() {
  std::vector<ad::Parameter*> out;
  hidden_.collect(out);
  out_.collect(out);
  return out;
}

Vec reparam_sample(const GaussianPosterior& q, const Vec& noise) {
  require(noise.size() == q.mean.size() && q.logvar.size() == q.mean.size(), "reparam_sample: dimension mismatch");
  return q.mean.array() + (0.5 * q.logvar.array()).exp() * noise.array();
}

ad::Var reparam_sample(const GaussVars& q, const Mat& noise) {
  ad::Graph& g = q.mean.graph();
  return ad::add(q.mean, ad::mul(ad::exp(ad::scale(q.logvar, 0.5)), g.constant(noise)));
}

Vec infer_seq_mean(const Mat& enc_means, const PriorConfig& priors) {
  require(enc_means.rows() >= 1, "infer_seq_mean: at least one segment mean is required");
  priors.validate();
  const double n = static_cast<double>(enc_means.rows());
  return enc_means.colwise().sum().transpose() / (n + priors.var_z2 / priors.var_mu2);
}

Vec infer_seq_mean(std::span<const Vec> enc_means, const PriorConfig& priors) {
  require(!enc_means.empty(), "infer_seq_mean: at least one segment mean is required");
  Mat m(enc_means.size(), enc_means.front().size());
  for (std::size_t i = 0; i < enc_means.size(); ++i) {
    require(enc_means[i].size() == m.cols(), "infer_seq_mean: inconsistent dimensions");
    m.row(static_cast<Eigen::Index>(i)) = enc_means[i].transpose();
  }
  return infer_seq_mean(m, priors);
}

}  // namespace fhvae
