// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include "scno/params.hpp"
#include "scno/rng.hpp"
#include "scno/tensor.hpp"

namespace scno {

/// Dense layer y = x W^T + b, with W stored out x in.
template <typename S = float>
struct Linear {
  Param<S> weight;  // out x in
  Param<S> bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
    Mat<S> w(out, in);
    const double a = std::sqrt(6.0 / double(in + out));  // Glorot uniform
    for (Eigen::Index i = 0; i < out; ++i)
      for (Eigen::Index j = 0; j < in; ++j)
        w(i, j) = S((2.0 * rng.uniform() - 1.0) * a);
    weight = Param<S>{name + ".weight", Var<S>::leaf(std::move(w), true), true};
    bias = Param<S>{name + ".bias", Var<S>::zeros(1, out, true), true};
  }

  /// Re-initializes for a low-dimensional coordinate input: weights span
  /// +-wscale so the layer starts with a spread of spatial frequencies, and
  /// biases get phase offsets in (-pi, pi). A Glorot fan-in of 1 would start
  /// the layer nearly linear in the coordinate and optimization would need
  /// thousands of steps just to grow the frequencies a basis needs.
  void frequency_init(Rng& rng, S wscale) {
    Mat<S>& w = weight.var.mutable_value();
    Mat<S>& b = bias.var.mutable_value();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        w(i, j) = S((2.0 * rng.uniform() - 1.0)) * wscale;
      b(0, i) = S((2.0 * rng.uniform() - 1.0) * M_PI);
    }
  }

  Var<S> forward(const Var<S>& x) const {
    return add_rowwise(matmul_nt(x, weight.var), bias.var);
  }
  Eigen::Index in_dim() const { return weight.var.cols(); }
  Eigen::Index out_dim() const { return weight.var.rows(); }
  void collect(ParamSet<S>& ps) {
    ps.add(weight);
    ps.add(bias);
  }
};

struct BatchNormError : AutodiffError {
  using AutodiffError::AutodiffError;
};

/// Batch normalization over the batch (row) dimension, per feature.
/// Train mode uses batch statistics and updates running stats with momentum
/// 0.1; eval mode uses running stats only.
template <typename S = float>
struct BatchNorm {
  Param<S> scale;  // 1 x n
  Param<S> shift;  // 1 x n
  Mat<S> running_mean;
  Mat<S> running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);
  bool disabled = false;  // test configuration: identity pass-through

  BatchNorm() = default;
  BatchNorm(const std::string& name, Eigen::Index n) {
    scale = Param<S>{name + ".scale", Var<S>::leaf(Mat<S>::Ones(1, n), true), true};
    shift = Param<S>{name + ".shift", Var<S>::zeros(1, n, true), true};
    running_mean = Mat<S>::Zero(1, n);
    running_var = Mat<S>::Ones(1, n);
  }

  Var<S> forward(const Var<S>& x, bool train) {
    if (disabled) return x;
    if (train) {
      if (x.rows() < 2) throw BatchNormError("batchnorm: train mode needs batch >= 2");
      Var<S> mu = colmean(x);
      Var<S> xc = add_rowwise(x, neg(mu));
      Var<S> var = colmean(mul(xc, xc));
      Var<S> inv_std = reciprocal(sqrt_op(
          add(var, Var<S>::constant(Mat<S>::Constant(1, x.cols(), eps)))));
      Var<S> y = mul_rowwise(mul_rowwise(xc, inv_std), scale.var);
      running_mean = (S(1) - momentum) * running_mean + momentum * mu.value();
      running_var = (S(1) - momentum) * running_var + momentum * var.value();
      return add_rowwise(y, shift.var);
    }
    Mat<S> inv = (running_var.array() + eps).rsqrt();
    Var<S> xc = add_rowwise(x, Var<S>::constant(-running_mean));
    Var<S> y = mul_rowwise(mul_rowwise(xc, Var<S>::constant(inv)), scale.var);
    return add_rowwise(y, shift.var);
  }

  void collect(ParamSet<S>& ps, const std::string& prefix) {
    ps.add(scale);
    ps.add(shift);
    ps.add_buffer(prefix + ".running_mean", running_mean);
    ps.add_buffer(prefix + ".running_var", running_var);
  }
};

enum class Activation { Tanh, Relu, Gelu, None };

template <typename S = float>
Var<S> activate(const Var<S>& x, Activation act) {
  switch (act) {
    case Activation::Tanh: return tanh_op(x);
    case Activation::Relu: return relu(x);
    case Activation::Gelu: return gelu(x);
    case Activation::None: return x;
  }
  return x;
}

}  // namespace scno
