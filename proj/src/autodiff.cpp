#include "fhvae/autodiff.hpp"

#include <cmath>

namespace fhvae::ad {

const Mat& Var::value() const { return g_->value_of(id_); }

Mat Var::grad() const {
  const auto& node = g_->nodes_[id_];
  if (node.grad.size() == 0) return Mat::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

Var Graph::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::input(Mat value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::make(Mat value, std::initializer_list<Var> inputs, BackFn back) {
  return make(std::move(value), std::vector<Var>(inputs), std::move(back));
}

Var Graph::make(Mat value, const std::vector<Var>& inputs, BackFn back) {
  Node n;
  n.value = std::move(value);
  for (const auto& v : inputs) {
    if (v.g_ != this) throw ContractError("autodiff: operands belong to different graphs");
    n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
  }
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat& Graph::grad_of(int id) {
  auto& node = nodes_[id];
  if (node.grad.size() == 0) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Graph::backward(const Var& loss) {
  require(loss.g_ == this, "backward: loss belongs to another graph");
  require(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be a scalar");
  require(!differentiated_, "backward: graph already differentiated");
  differentiated_ = true;
  if (!nodes_[loss.id_].needs_grad) return;
  grad_of(loss.id_)(0, 0) += 1.0;
  for (int i = loss.id_; i >= 0; --i) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.size() == 0) continue;
    if (node.back) node.back(*this, i);
    if (node.param != nullptr) node.param->grad += node.grad;
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string("autodiff ") + op + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// Accumulates into an operand only when it participates in differentiation.
template <typename Expr>
void acc(Graph& g, int id, const Expr& e) {
  if (g.needs_grad(id)) g.grad_of(id) += e;
}

Mat sigmoid_of(const Mat& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.graph().make(a.value() + b.value(), {a, b}, [ia, ib](Graph& g, int self) {
    acc(g, ia, g.grad_of(self));
    acc(g, ib, g.grad_of(self));
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.graph().make(a.value() - b.value(), {a, b}, [ia, ib](Graph& g, int self) {
    acc(g, ia, g.grad_of(self));
    acc(g, ib, -g.grad_of(self));
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.graph().make(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    acc(g, ia, go.cwiseProduct(g.value_of(ib)));
    acc(g, ib, go.cwiseProduct(g.value_of(ia)));
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.graph().make(a.value() * s, {a}, [ia, s](Graph& g, int self) { acc(g, ia, g.grad_of(self) * s); });
}

Var add_scalar(const Var& a, double s) {
  const int ia = a.id();
  return a.graph().make(a.value().array() + s, {a}, [ia](Graph& g, int self) { acc(g, ia, g.grad_of(self)); });
}

Var add_rowvec(const Var& a, const Var& r) {
  require(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec: shape mismatch");
  const int ia = a.id(), ir = r.id();
  Mat out = a.value().rowwise() + r.value().row(0);
  return a.graph().make(std::move(out), {a, r}, [ia, ir](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    acc(g, ia, go);
    acc(g, ir, go.colwise().sum());
  });
}

Var add_colvec(const Var& a, const Var& c) {
  require(c.cols() == 1 && c.rows() == a.rows(), "add_colvec: shape mismatch");
  const int ia = a.id(), ic = c.id();
  Mat out = a.value().colwise() + c.value().col(0);
  return a.graph().make(std::move(out), {a, c}, [ia, ic](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    acc(g, ia, go);
    acc(g, ic, go.rowwise().sum());
  });
}

Var mul_rowvec(const Var& a, const Var& r) {
  require(r.rows() == 1 && r.cols() == a.cols(), "mul_rowvec: shape mismatch");
  const int ia = a.id(), ir = r.id();
  Mat out = a.value().array().rowwise() * r.value().row(0).array();
  return a.graph().make(std::move(out), {a, r}, [ia, ir](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs_grad(ia)) g.grad_of(ia).array() += go.array().rowwise() * g.value_of(ir).row(0).array();
    acc(g, ir, go.cwiseProduct(g.value_of(ia)).colwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  Mat out = a.value() * b.value();
  return a.graph().make(std::move(out), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs_grad(ia)) g.grad_of(ia).noalias() += go * g.value_of(ib).transpose();
    if (g.needs_grad(ib)) g.grad_of(ib).noalias() += g.value_of(ia).transpose() * go;
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "matmul_tn: row counts differ");
  const int ia = a.id(), ib = b.id();
  Mat out = a.value().transpose() * b.value();
  return a.graph().make(std::move(out), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    if (g.needs_grad(ia)) g.grad_of(ia).noalias() += g.value_of(ib) * go.transpose();
    if (g.needs_grad(ib)) g.grad_of(ib).noalias() += g.value_of(ia) * go;
  });
}

Var exp(const Var& a) {
  const int ia = a.id();
  return a.graph().make(a.value().array().exp().matrix(), {a}, [ia](Graph& g, int self) {
    acc(g, ia, g.grad_of(self).cwiseProduct(g.value_of(self)));
  });
}

Var log(const Var& a) {
  const int ia = a.id();
  return a.graph().make(a.value().array().log().matrix(), {a}, [ia](Graph& g, int self) {
    acc(g, ia, g.grad_of(self).cwiseQuotient(g.value_of(ia)));
  });
}

Var square(const Var& a) {
  const int ia = a.id();
  return a.graph().make(a.value().array().square().matrix(), {a}, [ia](Graph& g, int self) {
    acc(g, ia, 2.0 * g.grad_of(self).cwiseProduct(g.value_of(ia)));
  });
}

Var sqrt(const Var& a) {
  const int ia = a.id();
  return a.graph().make(a.value().array().sqrt().matrix(), {a}, [ia](Graph& g, int self) {
    acc(g, ia, (0.5 * g.grad_of(self).array() / g.value_of(self).array()).matrix());
  });
}

Var reciprocal(const Var& a) {
  const int ia = a.id();
  return a.graph().make(a.value().array().inverse().matrix(), {a}, [ia](Graph& g, int self) {
    acc(g, ia, (-g.grad_of(self).array() * g.value_of(self).array().square()).matrix());
  });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  return a.graph().make(a.value().array().tanh().matrix(), {a}, [ia](Graph& g, int self) {
    acc(g, ia, (g.grad_of(self).array() * (1.0 - g.value_of(self).array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  return a.graph().make(sigmoid_of(a.value()), {a}, [ia](Graph& g, int self) {
    const auto y = g.value_of(self).array();
    acc(g, ia, (g.grad_of(self).array() * y * (1.0 - y)).matrix());
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  const int ia = a.id();
  Mat out = a.value().unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
  return a.graph().make(std::move(out), {a}, [ia, slope](Graph& g, int self) {
    const Mat d = g.value_of(ia).unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; });
    acc(g, ia, g.grad_of(self).cwiseProduct(d));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  const int ia = a.id();
  Mat out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.graph().make(std::move(out), {a}, [ia, lo, hi](Graph& g, int self) {
    const Mat d = g.value_of(ia).unaryExpr([lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
    acc(g, ia, g.grad_of(self).cwiseProduct(d));
  });
}

Var sum(const Var& a) {
  const int ia = a.id();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph().make(std::move(out), {a}, [ia](Graph& g, int self) {
    if (g.needs_grad(ia)) g.grad_of(ia).array() += g.grad_of(self)(0, 0);
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(const Var& a) {
  const int ia = a.id();
  Mat out = a.value().rowwise().sum();
  return a.graph().make(std::move(out), {a}, [ia](Graph& g, int self) {
    if (g.needs_grad(ia)) g.grad_of(ia).colwise() += g.grad_of(self).col(0);
  });
}

Var col_sum(const Var& a) {
  const int ia = a.id();
  Mat out = a.value().colwise().sum();
  return a.graph().make(std::move(out), {a}, [ia](Graph& g, int self) {
    if (g.needs_grad(ia)) g.grad_of(ia).rowwise() += g.grad_of(self).row(0);
  });
}

Var col_mean(const Var& a) { return scale(col_sum(a), 1.0 / static_cast<double>(a.rows())); }

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no operands");
  Graph& graph = parts.front().graph();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  auto back = [ids, offsets](Graph& g, int self) {
    const Mat& go = g.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.needs_grad(ids[k])) continue;
      Mat& gi = g.grad_of(ids[k]);
      gi += go.middleCols(offsets[k], gi.cols());
    }
  };
  return graph.make(std::move(out), parts, back);
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
  require(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols: out of range");
  const int ia = a.id();
  return a.graph().make(a.value().middleCols(start, n), {a}, [ia, start, n](Graph& g, int self) {
    if (g.needs_grad(ia)) g.grad_of(ia).middleCols(start, n) += g.grad_of(self);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n) {
  require(start >= 0 && n >= 0 && start + n <= a.rows(), "slice_rows: out of range");
  const int ia = a.id();
  return a.graph().make(a.value().middleRows(start, n), {a}, [ia, start, n](Graph& g, int self) {
    if (g.needs_grad(ia)) g.grad_of(ia).middleRows(start, n) += g.grad_of(self);
  });
}

Var tile_rows(const Var& a, int times) {
  require(times >= 1, "tile_rows: times must be >= 1");
  const int ia = a.id();
  const Eigen::Index r = a.rows();
  Mat out(r * times, a.cols());
  for (int t = 0; t < times; ++t) out.middleRows(t * r, r) = a.value();
  return a.graph().make(std::move(out), {a}, [ia, r, times](Graph& g, int self) {
    if (!g.needs_grad(ia)) return;
    const Mat& go = g.grad_of(self);
    Mat& gi = g.grad_of(ia);
    for (int t = 0; t < times; ++t) gi += go.middleRows(t * r, r);
  });
}

Var pick(const Var& a, const std::vector<int>& index) {
  require(static_cast<Eigen::Index>(index.size()) == a.rows(), "pick: one index per row required");
  Mat out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    require(index[r] >= 0 && index[r] < a.cols(), "pick: index out of range");
    out(r, 0) = a.value()(r, index[r]);
  }
  const int ia = a.id();
  return a.graph().make(std::move(out), {a}, [ia, index](Graph& g, int self) {
    if (!g.needs_grad(ia)) return;
    const Mat& go = g.grad_of(self);
    Mat& gi = g.grad_of(ia);
    for (std::size_t r = 0; r < index.size(); ++r) gi(r, index[r]) += go(r, 0);
  });
}

Var log_softmax_rows(const Var& a) {
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  const int ia = a.id();
  return a.graph().make(std::move(out), {a}, [ia](Graph& g, int self) {
    if (!g.needs_grad(ia)) return;
    const Mat& go = g.grad_of(self);
    const Mat p = g.value_of(self).array().exp();
    const Eigen::VectorXd gs = go.rowwise().sum();
    g.grad_of(ia) += go - (p.array().colwise() * gs.array()).matrix();
  });
}

Var time_mean(const Var& a, int steps, int batch) {
  require(steps >= 1 && batch >= 1 && a.rows() == static_cast<Eigen::Index>(steps) * batch,
          "time_mean: layout mismatch");
  Mat out = Mat::Zero(batch, a.cols());
  for (int t = 0; t < steps; ++t) out += a.value().middleRows(static_cast<Eigen::Index>(t) * batch, batch);
  out /= static_cast<double>(steps);
  const int ia = a.id();
  return a.graph().make(std::move(out), {a}, [ia, steps, batch](Graph& g, int self) {
    if (!g.needs_grad(ia)) return;
    const Mat go = g.grad_of(self) / static_cast<double>(steps);
    Mat& gi = g.grad_of(ia);
    for (int t = 0; t < steps; ++t) gi.middleRows(static_cast<Eigen::Index>(t) * batch, batch) += go;
  });
}

namespace {

struct LstmCache {
  Mat acts;    // (steps*batch) x 4H: i, f, g, o after activation
  Mat cells;   // (steps*batch) x H
  Mat tanh_c;  // (steps*batch) x H
};

}  // namespace

Var lstm(const Var& x, const Var& w_ih, const Var& w_hh, const Var& bias, int steps, int batch, bool reverse) {
  const Eigen::Index H = w_hh.rows();
  require(w_hh.cols() == 4 * H, "lstm: w_hh must be H x 4H");
  require(w_ih.rows() == x.cols() && w_ih.cols() == 4 * H, "lstm: w_ih must be in x 4H");
  require(bias.rows() == 1 && bias.cols() == 4 * H, "lstm: bias must be 1 x 4H");
  require(steps >= 1 && batch >= 1 && x.rows() == static_cast<Eigen::Index>(steps) * batch, "lstm: layout mismatch");

  const Mat& W = w_hh.value();
  Mat pre = x.value() * w_ih.value();
  pre.rowwise() += bias.value().row(0);

  auto cache = std::make_shared<LstmCache>();
  cache->acts.resize(pre.rows(), 4 * H);
  cache->cells.resize(pre.rows(), H);
  cache->tanh_c.resize(pre.rows(), H);
  Mat out(pre.rows(), H);

  Mat h = Mat::Zero(batch, H);
  Mat c = Mat::Zero(batch, H);
  Mat gates(batch, 4 * H);
  for (int k = 0; k < steps; ++k) {
    const int t = reverse ? steps - 1 - k : k;
    const Eigen::Index r0 = static_cast<Eigen::Index>(t) * batch;
    gates = pre.middleRows(r0, batch);
    gates.noalias() += h * W;
    auto a = cache->acts.middleRows(r0, batch);
    a.leftCols(2 * H) = sigmoid_of(gates.leftCols(2 * H));
    a.middleCols(2 * H, H) = gates.middleCols(2 * H, H).array().tanh().matrix();
    a.rightCols(H) = sigmoid_of(gates.rightCols(H));
    c = a.middleCols(H, H).cwiseProduct(c) + a.leftCols(H).cwiseProduct(a.middleCols(2 * H, H));
    cache->cells.middleRows(r0, batch) = c;
    cache->tanh_c.middleRows(r0, batch) = c.array().tanh().matrix();
    h = a.rightCols(H).cwiseProduct(cache->tanh_c.middleRows(r0, batch));
    out.middleRows(r0, batch) = h;
  }

  const int ix = x.id(), iw = w_ih.id(), iu = w_hh.id(), ib = bias.id();
  return x.graph().make(std::move(out), {x, w_ih, w_hh, bias},
                        [=](Graph& g, int self) {
                          const Mat& dout = g.grad_of(self);
                          const Mat& hs = g.value_of(self);
                          const Mat& Wh = g.value_of(iu);
                          Mat dpre(dout.rows(), 4 * H);
                          Mat dh_next = Mat::Zero(batch, H);
                          Mat dc_next = Mat::Zero(batch, H);
                          Mat dWh = Mat::Zero(H, 4 * H);
                          for (int k = steps - 1; k >= 0; --k) {
                            const int t = reverse ? steps - 1 - k : k;
                            const Eigen::Index r0 = static_cast<Eigen::Index>(t) * batch;
                            const auto a = cache->acts.middleRows(r0, batch);
                            const auto tc = cache->tanh_c.middleRows(r0, batch).array();
                            const auto ig = a.leftCols(H).array();
                            const auto fg = a.middleCols(H, H).array();
                            const auto gg = a.middleCols(2 * H, H).array();
                            const auto og = a.rightCols(H).array();

                            const Mat dh = dout.middleRows(r0, batch) + dh_next;
                            const Eigen::ArrayXXd dc = dh.array() * og * (1.0 - tc.square()) + dc_next.array();
                            auto dA = dpre.middleRows(r0, batch);
                            dA.rightCols(H) = (dh.array() * tc * og * (1.0 - og)).matrix();
                            dA.middleCols(2 * H, H) = (dc * ig * (1.0 - gg.square())).matrix();
                            dA.leftCols(H) = (dc * gg * ig * (1.0 - ig)).matrix();
                            if (k > 0) {
                              const int tp = reverse ? steps - k : k - 1;
                              const Eigen::Index p0 = static_cast<Eigen::Index>(tp) * batch;
                              dA.middleCols(H, H) =
                                  (dc * cache->cells.middleRows(p0, batch).array() * fg * (1.0 - fg)).matrix();
                              dWh.noalias() += hs.middleRows(p0, batch).transpose() * dA;
                            } else {
                              dA.middleCols(H, H).setZero();
                            }
                            dc_next = (dc * fg).matrix();
                            dh_next.noalias() = dA * Wh.transpose();
                          }
                          if (g.needs_grad(iu)) g.grad_of(iu) += dWh;
                          if (g.needs_grad(iw)) g.grad_of(iw).noalias() += g.value_of(ix).transpose() * dpre;
                          if (g.needs_grad(ib)) g.grad_of(ib) += dpre.colwise().sum();
                          if (g.needs_grad(ix)) g.grad_of(ix).noalias() += dpre * g.value_of(iw).transpose();
                        });
}

}  // namespace fhvae::ad
