#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Graph records every operation of one forward pass; Graph::backward walks
// the record in reverse and accumulates gradients. Parameters live outside the
// graph and receive their gradient when the graph is differentiated, so a new
// Graph is built for every training step.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fhvae/common.hpp"

namespace fhvae::ad {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  /// Gradient of the differentiated scalar w.r.t. this node (zeros if unreached).
  Mat grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Graph& graph() const { return *g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Node that never receives a gradient.
  Var constant(Mat value);
  /// Differentiable input not bound to a Parameter (gradient readable via Var::grad).
  Var input(Mat value);
  /// Node bound to `p`; backward() adds the gradient into p.grad.
  Var param(Parameter& p);

  /// Differentiates a 1x1 node. May be called once per graph.
  void backward(const Var& loss);

  // Building blocks for operations.
  Var make(Mat value, std::initializer_list<Var> inputs, BackFn back);
  Var make(Mat value, const std::vector<Var>& inputs, BackFn back);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  const Mat& value_of(int id) const { return nodes_[id].value; }
  /// Mutable gradient buffer of a node, allocated on first use.
  Mat& grad_of(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Mat value;
    Mat grad;
    BackFn back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

// Elementwise and shape operations. Binary ops require equal shapes unless the
// name says otherwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a (R x C) + r (1 x C) broadcast over rows.
Var add_rowvec(const Var& a, const Var& r);
/// a (R x C) + c (R x 1) broadcast over columns.
Var add_colvec(const Var& a, const Var& c);
/// a (R x C) * r (1 x C) broadcast over rows.
Var mul_rowvec(const Var& a, const Var& r);
Var matmul(const Var& a, const Var& b);
/// a^T * b
Var matmul_tn(const Var& a, const Var& b);

Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var reciprocal(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
/// Hard clamp; gradient is zero where the input lies outside [lo, hi].
Var clamp(const Var& a, double lo, double hi);

/// Sum of all entries (1 x 1).
Var sum(const Var& a);
Var mean(const Var& a);
/// Per-row sums (R x 1).
Var row_sum(const Var& a);
/// Per-column sums (1 x C).
Var col_sum(const Var& a);
Var col_mean(const Var& a);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n);
/// Stacks `times` copies of a vertically.
Var tile_rows(const Var& a, int times);
/// out(r) = a(r, index[r]) as an R x 1 column.
Var pick(const Var& a, const std::vector<int>& index);
/// Numerically stable row-wise log-softmax.
Var log_softmax_rows(const Var& a);

/// Time-major sequence layout: row t*batch + b holds step t of sequence b.
/// Mean over the `steps` time blocks, giving batch x C.
Var time_mean(const Var& a, int steps, int batch);

/// One unidirectional LSTM layer over a time-major input of `steps` blocks of
/// `batch` rows. Weights: w_ih (in x 4H), w_hh (H x 4H), bias (1 x 4H) with
/// gate order input, forget, cell, output. Returns the hidden states in the
/// same layout. `reverse` processes the steps from last to first.
Var lstm(const Var& x, const Var& w_ih, const Var& w_hh, const Var& bias, int steps, int batch, bool reverse);

}  // namespace fhvae::ad
