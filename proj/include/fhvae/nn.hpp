#pragma once

#include <string>
#include <vector>

#include "fhvae/autodiff.hpp"
#include "fhvae/rng.hpp"

namespace fhvae::nn {

/// Binds parameters into a graph: tracked (differentiable) or as constants.
class Binder {
 public:
  Binder(ad::Graph& g, bool track) : g_(g), track_(track) {}
  ad::Var operator()(ad::Parameter& p) const { return track_ ? g_.param(p) : g_.constant(p.value); }
  ad::Graph& graph() const { return g_; }
  bool tracking() const { return track_; }

 private:
  ad::Graph& g_;
  bool track_;
};

/// Fully connected layer y = x W + b.
struct Dense {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out

  Dense() = default;
  Dense(const std::string& name, int in, int out, Rng& rng);
  ad::Var operator()(const Binder& bind, const ad::Var& x);
  void collect(std::vector<ad::Parameter*>& out);
  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }
};

struct LstmWeights {
  ad::Parameter w_ih, w_hh, bias;

  LstmWeights() = default;
  LstmWeights(const std::string& name, int in, int hidden, Rng& rng);
  ad::Var operator()(const Binder& bind, const ad::Var& x, int steps, int batch, bool reverse);
  void collect(std::vector<ad::Parameter*>& out);
};

/// Stack of bidirectional LSTM layers; each layer's output concatenates the
/// forward and backward hidden states (2H columns).
struct BiLstmStack {
  std::vector<LstmWeights> fwd, bwd;
  int hidden = 0;

  BiLstmStack() = default;
  BiLstmStack(const std::string& name, int in, int hidden, int layers, Rng& rng);
  /// Time-major input (steps*batch x in) -> (steps*batch x 2H).
  ad::Var operator()(const Binder& bind, const ad::Var& x, int steps, int batch);
  /// Concatenation of the forward direction's last state and the backward
  /// direction's last state (its step 0), giving batch x 2H.
  ad::Var summary(const ad::Var& outputs, int steps, int batch) const;
  void collect(std::vector<ad::Parameter*>& out);
};

}  // namespace fhvae::nn
