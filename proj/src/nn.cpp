#include "fhvae/nn.hpp"

#include <cmath>

namespace fhvae::nn {

namespace {

Mat uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double limit) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-limit, limit);
  return m;
}

}  // namespace

Dense::Dense(const std::string& name, int in, int out, Rng& rng)
    : weight(name + "/w", uniform(rng, in, out, std::sqrt(6.0 / (in + out)))),
      bias(name + "/b", Mat::Zero(1, out)) {}

ad::Var Dense::operator()(const Binder& bind, const ad::Var& x) {
  return ad::add_rowvec(ad::matmul(x, bind(weight)), bind(bias));
}

void Dense::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LstmWeights::LstmWeights(const std::string& name, int in, int hidden, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih = ad::Parameter(name + "/w_ih", uniform(rng, in, 4 * hidden, limit));
  w_hh = ad::Parameter(name + "/w_hh", uniform(rng, hidden, 4 * hidden, limit));
  Mat b = Mat::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();  // forget-gate bias
  bias = ad::Parameter(name + "/b", b);
}

ad::Var LstmWeights::operator()(const Binder& bind, const ad::Var& x, int steps, int batch, bool reverse) {
  return ad::lstm(x, bind(w_ih), bind(w_hh), bind(bias), steps, batch, reverse);
}

void LstmWeights::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&w_ih);
  out.push_back(&w_hh);
  out.push_back(&bias);
}

BiLstmStack::BiLstmStack(const std::string& name, int in, int hidden_units, int layers, Rng& rng)
    : hidden(hidden_units) {
  for (int l = 0; l < layers; ++l) {
    const int layer_in = l == 0 ? in : 2 * hidden_units;
    fwd.emplace_back(name + "/l" + std::to_string(l) + "/fwd", layer_in, hidden_units, rng);
    bwd.emplace_back(name + "/l" + std::to_string(l) + "/bwd", layer_in, hidden_units, rng);
  }
}

ad::Var BiLstmStack::operator()(const Binder& bind, const ad::Var& x, int steps, int batch) {
  ad::Var h = x;
  for (std::size_t l = 0; l < fwd.size(); ++l) {
    const ad::Var f = fwd[l](bind, h, steps, batch, false);
    const ad::Var b = bwd[l](bind, h, steps, batch, true);
    h = ad::concat_cols({f, b});
  }
  return h;
}

ad::Var BiLstmStack::summary(const ad::Var& outputs, int steps, int batch) const {
  const ad::Var last = ad::slice_rows(outputs, static_cast<Eigen::Index>(steps - 1) * batch, batch);
  const ad::Var first = ad::slice_rows(outputs, 0, batch);
  return ad::concat_cols({ad::slice_cols(last, 0, hidden), ad::slice_cols(first, hidden, hidden)});
}

void BiLstmStack::collect(std::vector<ad::Parameter*>& out) {
  for (std::size_t l = 0; l < fwd.size(); ++l) {
    fwd[l].collect(out);
    bwd[l].collect(out);
  }
}

}  // namespace fhvae::nn
