#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Calling backward() on a
// 1x1 result walks the tape in reverse and accumulates gradients into the
// parameter stores the leaves were bound from. Tapes are single-use and not
// thread-safe; build one per forward pass.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mansy::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename T>
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> v) {
    Node n;
    n.owned = std::move(v);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf that reads `ref` in place. Gradients are added into `*sink` when it
  /// is non-null; `ref` and `sink` must outlive the tape.
  Var<T> leaf(const Matrix<T>& ref, Matrix<T>* sink) {
    Node n;
    n.ref = &ref;
    n.sink = sink;
    n.requires_grad = sink != nullptr;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Output node of an operation over `inputs`.
  template <typename... Vs>
  std::size_t push(Matrix<T> v, const Vs&... inputs) {
    Node n;
    n.owned = std::move(v);
    n.requires_grad = (false || ... || nodes_[inputs.id].requires_grad);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::size_t push_many(Matrix<T> v, const std::vector<Var<T>>& inputs) {
    Node n;
    n.owned = std::move(v);
    for (const auto& in : inputs) n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void on_backward(std::size_t id, std::function<void()> fn) {
    if (nodes_[id].requires_grad) nodes_[id].backward = std::move(fn);
  }

  const Matrix<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access.
  Matrix<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.sink) {
      if (n.sink->size() == 0) n.sink->setZero(value(id).rows(), value(id).cols());
      return *n.sink;
    }
    if (!n.has_grad) {
      n.grad.setZero(value(id).rows(), value(id).cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(Var<T> root) {
    if (value(root.id).size() != 1) throw std::invalid_argument("backward() needs a scalar root");
    grad(root.id).setConstant(T(1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.has_grad) n.backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> owned;
    const Matrix<T>* ref = nullptr;
    Matrix<T>* sink = nullptr;
    Matrix<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {
template <typename T>
void check(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}
}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check<T>(a.cols() == b.rows(), "matmul", "inner dimensions differ");
  Tape<T>& t = *a.tape;
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const auto id = t.push(std::move(out), a, b);
  t.on_backward(id, [&t, a, b, id] {
    const Matrix<T>& g = t.grad(id);
    if (t.requires_grad(a.id)) t.grad(a.id).noalias() += g * t.value(b.id).transpose();
    if (t.requires_grad(b.id)) t.grad(b.id).noalias() += t.value(a.id).transpose() * g;
  });
  return {&t, id};
}

/// a + bias, with a 1xN bias broadcast over every row.
template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  detail::check<T>(bias.rows() == 1 && bias.cols() == a.cols(), "add_bias", "bias must be 1xN");
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().rowwise() + bias.value().row(0);
  const auto id = t.push(std::move(out), a, bias);
  t.on_backward(id, [&t, a, bias, id] {
    const Matrix<T>& g = t.grad(id);
    if (t.requires_grad(a.id)) t.grad(a.id) += g;
    if (t.requires_grad(bias.id)) t.grad(bias.id) += g.colwise().sum();
  });
  return {&t, id};
}

/// x W + b
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check<T>(a.rows() == b.rows() && a.cols() == b.cols(), "add", "shape mismatch");
  Tape<T>& t = *a.tape;
  const auto id = t.push(a.value() + b.value(), a, b);
  t.on_backward(id, [&t, a, b, id] {
    const Matrix<T>& g = t.grad(id);
    if (t.requires_grad(a.id)) t.grad(a.id) += g;
    if (t.requires_grad(b.id)) t.grad(b.id) += g;
  });
  return {&t, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check<T>(a.rows() == b.rows() && a.cols() == b.cols(), "sub", "shape mismatch");
  Tape<T>& t = *a.tape;
  const auto id = t.push(a.value() - b.value(), a, b);
  t.on_backward(id, [&t, a, b, id] {
    const Matrix<T>& g = t.grad(id);
    if (t.requires_grad(a.id)) t.grad(a.id) += g;
    if (t.requires_grad(b.id)) t.grad(b.id) -= g;
  });
  return {&t, id};
}

/// Element-wise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check<T>(a.rows() == b.rows() && a.cols() == b.cols(), "mul", "shape mismatch");
  Tape<T>& t = *a.tape;
  const auto id = t.push(a.value().cwiseProduct(b.value()), a, b);
  t.on_backward(id, [&t, a, b, id] {
    const Matrix<T>& g = t.grad(id);
    if (t.requires_grad(a.id)) t.grad(a.id) += g.cwiseProduct(t.value(b.id));
    if (t.requires_grad(b.id)) t.grad(b.id) += g.cwiseProduct(t.value(a.id));
  });
  return {&t, id};
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& t = *a.tape;
  const auto id = t.push(a.value() * s, a);
  t.on_backward(id, [&t, a, id, s] { t.grad(a.id) += t.grad(id) * s; });
  return {&t, id};
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tape<T>& t = *a.tape;
  const auto id = t.push((a.value().array() + s).matrix(), a);
  t.on_backward(id, [&t, a, id] { t.grad(a.id) += t.grad(id); });
  return {&t, id};
}

// ---------------------------------------------------------------- element-wise maps

namespace detail {
/// Element-wise op whose derivative is a function of (input, output).
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, F f, D dfdx) {
  Tape<T>& t = *a.tape;
  const auto id = t.push(a.value().unaryExpr(f), a);
  t.on_backward(id, [&t, a, id, dfdx] {
    const Matrix<T>& x = t.value(a.id);
    const Matrix<T>& y = t.value(id);
    const Matrix<T>& g = t.grad(id);
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index i = 0; i < x.size(); ++i) ga.data()[i] += g.data()[i] * dfdx(x.data()[i], y.data()[i]);
  });
  return {&t, id};
}
}  // namespace detail

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> square(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// Clamp into [lo, hi]; zero gradient where clamped.
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  return detail::unary(
      a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T) { return (x < lo || x > hi) ? T(0) : T(1); });
}

/// Element-wise minimum; ties route the gradient to `a`.
template <typename T>
Var<T> minimum(Var<T> a, Var<T> b) {
  detail::check<T>(a.rows() == b.rows() && a.cols() == b.cols(), "minimum", "shape mismatch");
  Tape<T>& t = *a.tape;
  const auto id = t.push(a.value().cwiseMin(b.value()), a, b);
  t.on_backward(id, [&t, a, b, id] {
    const Matrix<T>& g = t.grad(id);
    const Matrix<T>& av = t.value(a.id);
    const Matrix<T>& bv = t.value(b.id);
    const bool ga = t.requires_grad(a.id);
    const bool gb = t.requires_grad(b.id);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if (av.data()[i] <= bv.data()[i]) {
        if (ga) t.grad(a.id).data()[i] += g.data()[i];
      } else if (gb) {
        t.grad(b.id).data()[i] += g.data()[i];
      }
    }
  });
  return {&t, id};
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const auto id = t.push(std::move(out), a);
  t.on_backward(id, [&t, a, id] { t.grad(a.id).array() += t.grad(id)(0, 0); });
  return {&t, id};
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

/// Row sums as an Nx1 column.
template <typename T>
Var<T> row_sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  const auto id = t.push(Matrix<T>(a.value().rowwise().sum()), a);
  t.on_backward(id, [&t, a, id] { t.grad(a.id).colwise() += t.grad(id).col(0); });
  return {&t, id};
}

// ---------------------------------------------------------------- softmax

template <typename T>
Matrix<T> softmax_rows_value(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  Tape<T>& t = *a.tape;
  const auto id = t.push(softmax_rows_value(a.value()), a);
  t.on_backward(id, [&t, a, id] {
    const Matrix<T>& y = t.value(id);
    const Matrix<T>& g = t.grad(id);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    t.grad(a.id) += ((g.colwise() - dot).array() * y.array()).matrix();
  });
  return {&t, id};
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    const T lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = (x.row(r).array() - lse).matrix();
  }
  const auto id = t.push(std::move(y), a);
  t.on_backward(id, [&t, a, id] {
    const Matrix<T> p = t.value(id).array().exp().matrix();
    const Matrix<T>& g = t.grad(id);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> gs = g.rowwise().sum();
    t.grad(a.id) += g - (p.array().colwise() * gs.array()).matrix();
  });
  return {&t, id};
}

/// out(r) = a(r, cols[r]) as an Nx1 column.
template <typename T>
Var<T> pick(Var<T> a, std::vector<int> cols) {
  detail::check<T>(static_cast<Eigen::Index>(cols.size()) == a.rows(), "pick", "one column per row");
  Tape<T>& t = *a.tape;
  Matrix<T> out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) out(r, 0) = a.value()(r, cols[static_cast<std::size_t>(r)]);
  const auto id = t.push(std::move(out), a);
  t.on_backward(id, [&t, a, id, cols = std::move(cols)] {
    const Matrix<T>& g = t.grad(id);
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r) ga(r, cols[static_cast<std::size_t>(r)]) += g(r, 0);
  });
  return {&t, id};
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::check<T>(!parts.empty(), "concat_cols", "no inputs");
  Tape<T>& t = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::check<T>(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  const auto id = t.push_many(std::move(out), parts);
  t.on_backward(id, [&t, parts, id] {
    const Matrix<T>& g = t.grad(id);
    Eigen::Index c0 = 0;
    for (const auto& p : parts) {
      if (t.requires_grad(p.id)) t.grad(p.id) += g.middleCols(c0, p.cols());
      c0 += p.cols();
    }
  });
  return {&t, id};
}

template <typename T>
Var<T> slice_cols(Var<T> a, Eigen::Index start, Eigen::Index count) {
  detail::check<T>(start >= 0 && start + count <= a.cols(), "slice_cols", "range out of bounds");
  Tape<T>& t = *a.tape;
  const auto id = t.push(Matrix<T>(a.value().middleCols(start, count)), a);
  t.on_backward(id, [&t, a, id, start, count] { t.grad(a.id).middleCols(start, count) += t.grad(id); });
  return {&t, id};
}

/// Gathers rows by index; repeated indices accumulate gradient.
template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<Eigen::Index> rows) {
  Tape<T>& t = *a.tape;
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::check<T>(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows", "row out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  const auto id = t.push(std::move(out), a);
  t.on_backward(id, [&t, a, id, rows = std::move(rows)] {
    const Matrix<T>& g = t.grad(id);
    Matrix<T>& ga = t.grad(a.id);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
  return {&t, id};
}

/// Interleaves per-timestep BxD matrices into a (B*L)xD segmented sequence in
/// which row b*L + s holds steps[s].row(b).
template <typename T>
Var<T> stack_time(const std::vector<Var<T>>& steps) {
  detail::check<T>(!steps.empty(), "stack_time", "no steps");
  Tape<T>& t = *steps.front().tape;
  const Eigen::Index batch = steps.front().rows();
  const Eigen::Index width = steps.front().cols();
  const auto len = static_cast<Eigen::Index>(steps.size());
  Matrix<T> out(batch * len, width);
  for (Eigen::Index s = 0; s < len; ++s) {
    const auto& v = steps[static_cast<std::size_t>(s)];
    detail::check<T>(v.rows() == batch && v.cols() == width, "stack_time", "step shapes differ");
    for (Eigen::Index b = 0; b < batch; ++b) out.row(b * len + s) = v.value().row(b);
  }
  const auto id = t.push_many(std::move(out), steps);
  t.on_backward(id, [&t, steps, id, batch, len] {
    const Matrix<T>& g = t.grad(id);
    for (Eigen::Index s = 0; s < len; ++s) {
      const auto& v = steps[static_cast<std::size_t>(s)];
      if (!t.requires_grad(v.id)) continue;
      Matrix<T>& gv = t.grad(v.id);
      for (Eigen::Index b = 0; b < batch; ++b) gv.row(b) += g.row(b * len + s);
    }
  });
  return {&t, id};
}

// ---------------------------------------------------------------- sequence layers

/// Row-wise layer normalisation with learnable 1xN gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  const Eigen::Index n = x.cols();
  Matrix<T> xhat(x.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mu = x.row(r).mean();
    const T var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = ((x.row(r).array() - mu) * inv_std(r)).matrix();
  }
  Matrix<T> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const auto id = t.push(std::move(out), a, gain, bias);
  t.on_backward(id, [&t, a, gain, bias, id, xhat = std::move(xhat), inv_std = std::move(inv_std), n] {
    const Matrix<T>& g = t.grad(id);
    if (t.requires_grad(gain.id)) t.grad(gain.id) += g.cwiseProduct(xhat).colwise().sum();
    if (t.requires_grad(bias.id)) t.grad(bias.id) += g.colwise().sum();
    if (!t.requires_grad(a.id)) return;
    const Matrix<T> gx = (g.array().rowwise() * t.value(gain.id).row(0).array()).matrix();
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index r = 0; r < gx.rows(); ++r) {
      const T m1 = gx.row(r).mean();
      const T m2 = gx.row(r).cwiseProduct(xhat.row(r)).mean();
      ga.row(r) += (inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2)).matrix();
    }
    (void)n;
  });
  return {&t, id};
}

/// Scaled dot-product attention over a batch of segmented sequences with
/// several heads packed along the columns.
///
/// q is (B*lq) x (heads*dk), k is (B*lk) x (heads*dk), v is (B*lk) x (heads*dv).
/// Head h reads columns [h*dk, (h+1)*dk) of q and k and [h*dv, (h+1)*dv) of v.
/// With `causal`, query position i attends to key positions <= i only.
/// Returns (B*lq) x (heads*dv).
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads, Eigen::Index lq, Eigen::Index lk,
                 bool causal = false) {
  detail::check<T>(heads >= 1, "attention", "need at least one head");
  detail::check<T>(lq >= 1 && lk >= 1 && q.rows() % lq == 0, "attention", "bad query segmentation");
  const Eigen::Index batch = q.rows() / lq;
  detail::check<T>(k.rows() == batch * lk && v.rows() == batch * lk, "attention",
                   "key/value rows inconsistent with batch");
  detail::check<T>(q.cols() == k.cols() && q.cols() % heads == 0 && v.cols() % heads == 0, "attention",
                   "head widths inconsistent");
  detail::check<T>(!causal || lq == lk, "attention", "causal attention needs equal lengths");
  const Eigen::Index dk = q.cols() / heads;
  const Eigen::Index dv = v.cols() / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dk));

  Tape<T>& t = *q.tape;
  const Matrix<T>& qv = q.value();
  const Matrix<T>& kv = k.value();
  const Matrix<T>& vv = v.value();
  // Attention weights for every (batch, head), stacked: block (b*heads + h).
  std::vector<Matrix<T>> probs(static_cast<std::size_t>(batch * heads));
  Matrix<T> out(batch * lq, heads * dv);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      Matrix<T> s;
      s.noalias() = qv.block(b * lq, h * dk, lq, dk) * kv.block(b * lk, h * dk, lk, dk).transpose();
      s *= inv_scale;
      if (causal) {
        for (Eigen::Index i = 0; i < lq; ++i)
          for (Eigen::Index j = i + 1; j < lk; ++j) s(i, j) = -std::numeric_limits<T>::infinity();
      }
      Matrix<T> p = softmax_rows_value(s);
      out.block(b * lq, h * dv, lq, dv).noalias() = p * vv.block(b * lk, h * dv, lk, dv);
      probs[static_cast<std::size_t>(b * heads + h)] = std::move(p);
    }
  }
  const auto id = t.push(std::move(out), q, k, v);
  t.on_backward(id, [&t, q, k, v, id, heads, lq, lk, dk, dv, batch, inv_scale, probs = std::move(probs)] {
    const Matrix<T>& g = t.grad(id);
    const bool gq = t.requires_grad(q.id);
    const bool gk = t.requires_grad(k.id);
    const bool gv = t.requires_grad(v.id);
    const Matrix<T>& qv = t.value(q.id);
    const Matrix<T>& kv = t.value(k.id);
    const Matrix<T>& vv = t.value(v.id);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Matrix<T>& p = probs[static_cast<std::size_t>(b * heads + h)];
        const auto go = g.block(b * lq, h * dv, lq, dv);
        if (gv) t.grad(v.id).block(b * lk, h * dv, lk, dv).noalias() += p.transpose() * go;
        if (!gq && !gk) continue;
        Matrix<T> dp;
        dp.noalias() = go * vv.block(b * lk, h * dv, lk, dv).transpose();
        const Eigen::Matrix<T, Eigen::Dynamic, 1> dot = dp.cwiseProduct(p).rowwise().sum();
        Matrix<T> ds = ((dp.colwise() - dot).array() * p.array()).matrix() * inv_scale;
        if (gq) t.grad(q.id).block(b * lq, h * dk, lq, dk).noalias() += ds * kv.block(b * lk, h * dk, lk, dk);
        if (gk)
          t.grad(k.id).block(b * lk, h * dk, lk, dk).noalias() += ds.transpose() * qv.block(b * lq, h * dk, lq, dk);
      }
    }
  });
  return {&t, id};
}

/// Same-padded 1-D convolution unfold ("im2col") over segmented sequences:
/// row (b, s) becomes [x(s - r), ..., x(s), ..., x(s + r)] with r = kernel / 2,
/// zeros outside the segment. Multiplying by a (kernel*C) x C_out matrix then
/// performs the convolution.
template <typename T>
Var<T> unfold_same(Var<T> a, Eigen::Index seq_len, int kernel) {
  detail::check<T>(kernel >= 1 && kernel % 2 == 1, "unfold_same", "kernel must be odd");
  detail::check<T>(seq_len >= 1 && a.rows() % seq_len == 0, "unfold_same", "bad segmentation");
  const Eigen::Index batch = a.rows() / seq_len;
  const Eigen::Index ch = a.cols();
  const int r = kernel / 2;
  Tape<T>& t = *a.tape;
  Matrix<T> out = Matrix<T>::Zero(a.rows(), ch * kernel);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index s = 0; s < seq_len; ++s)
      for (int o = -r; o <= r; ++o) {
        const Eigen::Index src = s + o;
        if (src < 0 || src >= seq_len) continue;
        out.block(b * seq_len + s, (o + r) * ch, 1, ch) = a.value().row(b * seq_len + src);
      }
  const auto id = t.push(std::move(out), a);
  t.on_backward(id, [&t, a, id, batch, seq_len, ch, r] {
    const Matrix<T>& g = t.grad(id);
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (Eigen::Index s = 0; s < seq_len; ++s)
        for (int o = -r; o <= r; ++o) {
          const Eigen::Index src = s + o;
          if (src < 0 || src >= seq_len) continue;
          ga.row(b * seq_len + src) += g.block(b * seq_len + s, (o + r) * ch, 1, ch);
        }
  });
  return {&t, id};
}

/// Output length of pooled_max for an input segment of length `len`.
inline Eigen::Index pooled_length(Eigen::Index len) { return (len + 1) / 2; }

/// Max-pool with kernel 3, stride 2, padding 1 along each segment; output
/// segments have length ceil(L/2). Padding never wins the max.
template <typename T>
Var<T> max_pool_seq(Var<T> a, Eigen::Index seq_len) {
  detail::check<T>(seq_len >= 1 && a.rows() % seq_len == 0, "max_pool_seq", "bad segmentation");
  const Eigen::Index batch = a.rows() / seq_len;
  const Eigen::Index out_len = pooled_length(seq_len);
  Tape<T>& t = *a.tape;
  const Matrix<T>& x = a.value();
  Matrix<T> out(batch * out_len, x.cols());
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(out.size()));
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index s = 0; s < out_len; ++s)
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::Index best = -1;
        for (Eigen::Index src = 2 * s - 1; src <= 2 * s + 1; ++src) {
          if (src < 0 || src >= seq_len) continue;
          if (best < 0 || x(b * seq_len + src, c) > x(b * seq_len + best, c)) best = src;
        }
        out(b * out_len + s, c) = x(b * seq_len + best, c);
        argmax[static_cast<std::size_t>((b * out_len + s) * x.cols() + c)] = b * seq_len + best;
      }
  const auto id = t.push(std::move(out), a);
  t.on_backward(id, [&t, a, id, argmax = std::move(argmax)] {
    const Matrix<T>& g = t.grad(id);
    Matrix<T>& ga = t.grad(a.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c)
        ga(argmax[static_cast<std::size_t>(r * g.cols() + c)], c) += g(r, c);
  });
  return {&t, id};
}

/// Element-wise periodic squared error: min over k in {-1,0,1} of
/// (pred - truth + k * period_col)^2, where period_col holds one period per
/// column (0 disables wrapping for that column). Gradient flows to `pred` only.
template <typename T>
Var<T> wrap_squared_error(Var<T> pred, const Matrix<T>& truth, const std::vector<T>& period_per_col) {
  detail::check<T>(pred.rows() == truth.rows() && pred.cols() == truth.cols(), "wrap_squared_error",
                   "shape mismatch");
  detail::check<T>(static_cast<Eigen::Index>(period_per_col.size()) == pred.cols(), "wrap_squared_error",
                   "one period per column");
  Tape<T>& t = *pred.tape;
  const Matrix<T>& p = pred.value();
  Matrix<T> out(p.rows(), p.cols());
  Matrix<T> diff(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const T period = period_per_col[static_cast<std::size_t>(c)];
      const T d0 = p(r, c) - truth(r, c);
      T best = d0;
      for (const T d : {d0 + period, d0 - period})
        if (std::abs(d) < std::abs(best)) best = d;
      diff(r, c) = best;
      out(r, c) = best * best;
    }
  const auto id = t.push(std::move(out), pred);
  t.on_backward(id, [&t, pred, id, diff = std::move(diff)] {
    t.grad(pred.id) += (t.grad(id).array() * T(2) * diff.array()).matrix();
  });
  return {&t, id};
}

}  // namespace mansy::ad
