// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace scno {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

struct AutodiffError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : AutodiffError {
  using AutodiffError::AutodiffError;
};
struct NonFiniteError : AutodiffError {
  using AutodiffError::AutodiffError;
};

/// Test-only mode: spike_step forward uses the smooth fast-sigmoid instead of
/// the hard Heaviside, so finite-difference gradient checks apply to spiking
/// paths. Off by default.
inline thread_local bool g_smooth_spike_forward = false;

struct SmoothSpikeGuard {
  bool prev;
  explicit SmoothSpikeGuard(bool on = true) : prev(g_smooth_spike_forward) {
    g_smooth_spike_forward = on;
  }
  ~SmoothSpikeGuard() { g_smooth_spike_forward = prev; }
};

template <typename S>
struct TensorNode {
  Mat<S> value;
  Mat<S> grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
  int mark = 0;  // topo-sort state: 0 unvisited, 1 on stack, 2 done

  void ensure_grad() {
    if (grad.size() == 0) grad = Mat<S>::Zero(value.rows(), value.cols());
  }
};

/// Handle to a node in the gradient tape. Copy is shallow (shared node).
template <typename S>
class Var {
 public:
  Var() = default;

  static Var leaf(Mat<S> v, bool requires_grad = false) {
    Var t;
    t.n_ = std::make_shared<TensorNode<S>>();
    t.n_->value = std::move(v);
    t.n_->requires_grad = requires_grad;
    return t;
  }
  static Var constant(Mat<S> v) { return leaf(std::move(v), false); }
  static Var scalar(S v, bool requires_grad = false) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), requires_grad);
  }
  static Var zeros(Eigen::Index r, Eigen::Index c, bool requires_grad = false) {
    return leaf(Mat<S>::Zero(r, c), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Mat<S>& value() const { return n_->value; }
  Mat<S>& mutable_value() { return n_->value; }
  Mat<S>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  bool has_grad() const { return n_->grad.size() != 0; }
  void clear_grad() { n_->grad.resize(0, 0); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }
  Eigen::Index rows() const { return n_->value.rows(); }
  Eigen::Index cols() const { return n_->value.cols(); }
  Eigen::Index size() const { return n_->value.size(); }
  S item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not scalar");
    return n_->value(0, 0);
  }
  std::shared_ptr<TensorNode<S>> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode<S>> n_;
};

namespace detail {

template <typename S>
void check_finite(const Mat<S>& m, const char* opname) {
  if (!m.allFinite())
    throw NonFiniteError(std::string("non-finite output in op '") + opname + "'");
}

// Builds an op node. When no input requires gradients the result is a plain
// constant leaf and the tape does not grow.
template <typename S>
Var<S> op(const char* name, std::initializer_list<Var<S>> inputs, Mat<S> value,
          std::function<void(TensorNode<S>&)> backprop) {
  check_finite(value, name);
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in.requires_grad();
  if (!rg) return Var<S>::constant(std::move(value));
  Var<S> out = Var<S>::leaf(std::move(value), true);
  for (const auto& in : inputs) out.node()->parents.push_back(in.node());
  out.node()->backprop = std::move(backprop);
  return out;
}

template <typename S>
void accumulate(const Var<S>& dst, const Mat<S>& g) {
  if (!dst.requires_grad()) return;
  auto n = dst.node();
  n->ensure_grad();
  n->grad += g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Mat<S> v = a.value() * b.value();
  return detail::op<S>("matmul", {a, b}, std::move(v), [a, b](TensorNode<S>& n) {
    detail::accumulate(a, Mat<S>(n.grad * b.value().transpose()));
    detail::accumulate(b, Mat<S>(a.value().transpose() * n.grad));
  });
}

/// a * b^T
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Mat<S> v = a.value() * b.value().transpose();
  return detail::op<S>("matmul_nt", {a, b}, std::move(v), [a, b](TensorNode<S>& n) {
    detail::accumulate(a, Mat<S>(n.grad * b.value()));
    detail::accumulate(b, Mat<S>(n.grad.transpose() * a.value()));
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("add: shape mismatch");
  Mat<S> v = a.value() + b.value();
  return detail::op<S>("add", {a, b}, std::move(v), [a, b](TensorNode<S>& n) {
    detail::accumulate(a, n.grad);
    detail::accumulate(b, n.grad);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("sub: shape mismatch");
  Mat<S> v = a.value() - b.value();
  return detail::op<S>("sub", {a, b}, std::move(v), [a, b](TensorNode<S>& n) {
    detail::accumulate(a, n.grad);
    detail::accumulate(b, Mat<S>(-n.grad));
  });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  Mat<S> v = -a.value();
  return detail::op<S>("neg", {a}, std::move(v), [a](TensorNode<S>& n) {
    detail::accumulate(a, Mat<S>(-n.grad));
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mul: shape mismatch");
  Mat<S> v = a.value().cwiseProduct(b.value());
  return detail::op<S>("mul", {a, b}, std::move(v), [a, b](TensorNode<S>& n) {
    detail::accumulate(a, Mat<S>(n.grad.cwiseProduct(b.value())));
    detail::accumulate(b, Mat<S>(n.grad.cwiseProduct(a.value())));
  });
}

/// Elementwise multiply by a constant.
template <typename S>
Var<S> scale(const Var<S>& a, S c) {
  Mat<S> v = a.value() * c;
  return detail::op<S>("scale", {a}, std::move(v), [a, c](TensorNode<S>& n) {
    detail::accumulate(a, Mat<S>(n.grad * c));
  });
}

/// x + row broadcast over rows (bias add); r is 1 x n.
template <typename S>
Var<S> add_rowwise(const Var<S>& x, const Var<S>& r) {
  if (r.rows() != 1 || r.cols() != x.cols())
    throw ShapeError("add_rowwise: expected 1 x cols(x) row");
  Mat<S> v = x.value().rowwise() + r.value().row(0);
  return detail::op<S>("add_rowwise", {x, r}, std::move(v), [x, r](TensorNode<S>& n) {
    detail::accumulate(x, n.grad);
    detail::accumulate(r, Mat<S>(n.grad.colwise().sum()));
  });
}

/// x .* row broadcast over rows; r is 1 x n.
template <typename S>
Var<S> mul_rowwise(const Var<S>& x, const Var<S>& r) {
  if (r.rows() != 1 || r.cols() != x.cols())
    throw ShapeError("mul_rowwise: expected 1 x cols(x) row");
  Mat<S> v = x.value().array().rowwise() * r.value().array().row(0);
  return detail::op<S>("mul_rowwise", {x, r}, std::move(v), [x, r](TensorNode<S>& n) {
    detail::accumulate(
        x, Mat<S>(n.grad.array().rowwise() * r.value().array().row(0)));
    detail::accumulate(r, Mat<S>(n.grad.cwiseProduct(x.value()).colwise().sum()));
  });
}

/// x * s where s is a 1x1 tensor.
template <typename S>
Var<S> mul_scalar(const Var<S>& x, const Var<S>& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("mul_scalar: s must be 1x1");
  Mat<S> v = x.value() * s.value()(0, 0);
  return detail::op<S>("mul_scalar", {x, s}, std::move(v), [x, s](TensorNode<S>& n) {
    detail::accumulate(x, Mat<S>(n.grad * s.value()(0, 0)));
    Mat<S> gs(1, 1);
    gs(0, 0) = n.grad.cwiseProduct(x.value()).sum();
    detail::accumulate(s, gs);
  });
}

/// x + s where s is a 1x1 tensor, broadcast elementwise.
template <typename S>
Var<S> add_scalar(const Var<S>& x, const Var<S>& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("add_scalar: s must be 1x1");
  Mat<S> v = x.value().array() + s.value()(0, 0);
  return detail::op<S>("add_scalar", {x, s}, std::move(v), [x, s](TensorNode<S>& n) {
    detail::accumulate(x, n.grad);
    Mat<S> gs(1, 1);
    gs(0, 0) = n.grad.sum();
    detail::accumulate(s, gs);
  });
}

template <typename S>
Var<S> tanh_op(const Var<S>& x) {
  Mat<S> v = x.value().array().tanh();
  return detail::op<S>("tanh", {x}, std::move(v), [x](TensorNode<S>& n) {
    detail::accumulate(
        x, Mat<S>(n.grad.array() * (S(1) - n.value.array().square())));
  });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  Mat<S> v = (S(1) / (S(1) + (-x.value().array()).exp())).matrix();
  return detail::op<S>("sigmoid", {x}, std::move(v), [x](TensorNode<S>& n) {
    detail::accumulate(
        x, Mat<S>(n.grad.array() * n.value.array() * (S(1) - n.value.array())));
  });
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  Mat<S> v = x.value().cwiseMax(S(0));
  return detail::op<S>("relu", {x}, std::move(v), [x](TensorNode<S>& n) {
    detail::accumulate(
        x, Mat<S>(n.grad.array() * (x.value().array() > S(0)).template cast<S>()));
  });
}

/// Exact (erf-based) GELU.
template <typename S>
Var<S> gelu(const Var<S>& x) {
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  Mat<S> v = x.value().unaryExpr([inv_sqrt2](S a) {
    return S(0.5) * a * (S(1) + std::erf(a * inv_sqrt2));
  });
  return detail::op<S>("gelu", {x}, std::move(v), [x, inv_sqrt2](TensorNode<S>& n) {
    const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * S(M_PI));
    Mat<S> d = x.value().unaryExpr([=](S a) {
      S cdf = S(0.5) * (S(1) + std::erf(a * inv_sqrt2));
      S pdf = inv_sqrt_2pi * std::exp(S(-0.5) * a * a);
      return cdf + a * pdf;
    });
    detail::accumulate(x, Mat<S>(n.grad.cwiseProduct(d)));
  });
}

template <typename S>
Var<S> sqrt_op(const Var<S>& x) {
  Mat<S> v = x.value().array().sqrt();
  return detail::op<S>("sqrt", {x}, std::move(v), [x](TensorNode<S>& n) {
    detail::accumulate(x, Mat<S>(n.grad.array() * (S(0.5) / n.value.array())));
  });
}

template <typename S>
Var<S> reciprocal(const Var<S>& x) {
  Mat<S> v = x.value().array().inverse();
  return detail::op<S>("reciprocal", {x}, std::move(v), [x](TensorNode<S>& n) {
    detail::accumulate(x, Mat<S>(-n.grad.array() * n.value.array().square()));
  });
}

template <typename S>
Var<S> sum(const Var<S>& x) {
  Mat<S> v(1, 1);
  v(0, 0) = x.value().sum();
  return detail::op<S>("sum", {x}, std::move(v), [x](TensorNode<S>& n) {
    detail::accumulate(
        x, Mat<S>(Mat<S>::Constant(x.rows(), x.cols(), n.grad(0, 0))));
  });
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  Mat<S> v(1, 1);
  v(0, 0) = x.value().mean();
  return detail::op<S>("mean", {x}, std::move(v), [x](TensorNode<S>& n) {
    S g = n.grad(0, 0) / S(x.size());
    detail::accumulate(x, Mat<S>(Mat<S>::Constant(x.rows(), x.cols(), g)));
  });
}

/// Per-column mean over rows; result is 1 x cols.
template <typename S>
Var<S> colmean(const Var<S>& x) {
  Mat<S> v = x.value().colwise().mean();
  return detail::op<S>("colmean", {x}, std::move(v), [x](TensorNode<S>& n) {
    Mat<S> g = Mat<S>::Zero(x.rows(), x.cols());
    g.array().rowwise() += n.grad.array().row(0) / S(x.rows());
    detail::accumulate(x, g);
  });
}

/// Mean squared error between two same-shape tensors; scalar output.
template <typename S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mse: shape mismatch");
  Mat<S> d = a.value() - b.value();
  Mat<S> v(1, 1);
  v(0, 0) = d.array().square().mean();
  return detail::op<S>("mse", {a, b}, std::move(v), [a, b](TensorNode<S>& n) {
    S c = S(2) * n.grad(0, 0) / S(a.size());
    Mat<S> g = c * (a.value() - b.value());
    detail::accumulate(a, g);
    detail::accumulate(b, Mat<S>(-g));
  });
}

template <typename S>
Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row mismatch");
  Mat<S> v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  return detail::op<S>("concat_cols", {a, b}, std::move(v), [a, b](TensorNode<S>& n) {
    detail::accumulate(a, Mat<S>(n.grad.leftCols(a.cols())));
    detail::accumulate(b, Mat<S>(n.grad.rightCols(b.cols())));
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& x, Eigen::Index j0, Eigen::Index ncols) {
  if (j0 < 0 || ncols < 0 || j0 + ncols > x.cols())
    throw ShapeError("slice_cols: out of range");
  Mat<S> v = x.value().middleCols(j0, ncols);
  return detail::op<S>("slice_cols", {x}, std::move(v), [x, j0, ncols](TensorNode<S>& n) {
    Mat<S> g = Mat<S>::Zero(x.rows(), x.cols());
    g.middleCols(j0, ncols) = n.grad;
    detail::accumulate(x, g);
  });
}

/// Broadcast a 1 x n row to rows x n.
template <typename S>
Var<S> broadcast_row(const Var<S>& r, Eigen::Index nrows) {
  if (r.rows() != 1) throw ShapeError("broadcast_row: input must be a row");
  Mat<S> v = r.value().replicate(nrows, 1);
  return detail::op<S>("broadcast_row", {r}, std::move(v), [r](TensorNode<S>& n) {
    detail::accumulate(r, Mat<S>(n.grad.colwise().sum()));
  });
}

/// Column-major-order preserving reshape.
template <typename S>
Var<S> reshape(const Var<S>& x, Eigen::Index r, Eigen::Index c) {
  if (r * c != x.size()) throw ShapeError("reshape: element count mismatch");
  Mat<S> v = Eigen::Map<const Mat<S>>(x.value().data(), r, c);
  Eigen::Index xr = x.rows(), xc = x.cols();
  return detail::op<S>("reshape", {x}, std::move(v), [x, xr, xc](TensorNode<S>& n) {
    detail::accumulate(x, Mat<S>(Eigen::Map<const Mat<S>>(n.grad.data(), xr, xc)));
  });
}

/// Stack k vertical copies of x.
template <typename S>
Var<S> tile_rows(const Var<S>& x, Eigen::Index k) {
  Mat<S> v = x.value().replicate(k, 1);
  return detail::op<S>("tile_rows", {x}, std::move(v), [x, k](TensorNode<S>& n) {
    Mat<S> g = Mat<S>::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < k; ++i) g += n.grad.middleRows(i * x.rows(), x.rows());
    detail::accumulate(x, g);
  });
}

/// Cuts the tape: returns a constant copy of x's value.
template <typename S>
Var<S> detach(const Var<S>& x) {
  return Var<S>::constant(x.value());
}

/// Thresholded spike nonlinearity. Forward is Heaviside(x - threshold) in hard
/// mode, the smooth fast-sigmoid 0.5*(1 + d/(1 + slope*|d|)) in smooth mode.
/// Backward routes the fast-sigmoid surrogate derivative 1/(1+slope*|d|)^2
/// in hard mode and the true smooth derivative in smooth mode.
template <typename S>
Var<S> spike_step(const Var<S>& v, S threshold, S slope) {
  if (threshold <= S(0)) throw AutodiffError("spike_step: threshold must be positive");
  if (slope <= S(0)) throw AutodiffError("spike_step: slope must be positive");
  const bool smooth = g_smooth_spike_forward;
  Mat<S> out;
  if (smooth) {
    out = v.value().unaryExpr([threshold, slope](S a) {
      S d = a - threshold;
      return S(0.5) * (S(1) + d / (S(1) + slope * std::abs(d)));
    });
  } else {
    out = (v.value().array() >= threshold).template cast<S>();
  }
  return detail::op<S>("spike_step", {v}, std::move(out),
                       [v, threshold, slope, smooth](TensorNode<S>& n) {
    Mat<S> d = v.value().unaryExpr([=](S a) {
      S q = S(1) + slope * std::abs(a - threshold);
      S g = S(1) / (q * q);
      return smooth ? S(0.5) * g : g;
    });
    detail::accumulate(v, Mat<S>(n.grad.cwiseProduct(d)));
  });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node with requires_grad set; call clear_grad/zero first if a
/// fresh pass is wanted.
template <typename S>
void backward(const Var<S>& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw AutodiffError("backward: loss must be scalar");
  auto root = loss.node();
  if (!root) throw AutodiffError("backward: undefined tensor");

  std::vector<TensorNode<S>*> order;
  std::vector<std::pair<TensorNode<S>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  root->mark = 1;
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode<S>* p = node->parents[idx++].get();
      if (p->mark == 1) throw AutodiffError("backward: cycle in tape");
      if (p->mark == 0) {
        p->mark = 1;
        stack.emplace_back(p, 0);
      }
    } else {
      node->mark = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad(0, 0) += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<S>* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
  for (auto* n : order) n->mark = 0;
}

}  // namespace scno
