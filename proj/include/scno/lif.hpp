// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scno/nn.hpp"
#include "scno/params.hpp"
#include "scno/tensor.hpp"

namespace scno {

/// Spike counters, per layer and total.
struct SpikeStats {
  std::vector<std::uint64_t> per_layer;
  std::uint64_t total = 0;
  std::uint64_t samples_seen = 0;

  void add(size_t layer, std::uint64_t n) {
    if (per_layer.size() <= layer) per_layer.resize(layer + 1, 0);
    per_layer[layer] += n;
    total += n;
  }
  void merge(const SpikeStats& o) {
    for (size_t i = 0; i < o.per_layer.size(); ++i) add(i, o.per_layer[i]);
    samples_seen += o.samples_seen;
  }
  double per_inference() const {
    return samples_seen == 0 ? 0.0 : double(total) / double(samples_seen);
  }
};

/// Convex combination (1-gamma) * rate + gamma * x_in with gamma = a 1x1
/// tensor in (0,1).
template <typename S = float>
Var<S> skip_combine(const Var<S>& rate, const Var<S>& x_in, const Var<S>& gamma) {
  if (rate.rows() != x_in.rows() || rate.cols() != x_in.cols())
    throw ShapeError("skip_combine: shape mismatch");
  Var<S> one_minus = sub(Var<S>::scalar(S(1)), gamma);
  return add(mul_scalar(rate, one_minus), mul_scalar(x_in, gamma));
}

/// Leaky integrate-and-fire layer. The synaptic current
/// I = batchnorm(x W^T + b) is computed once and injected identically at each
/// of T_s simulation steps:
///   v_t = beta * v_{t-1} + I - s_{t-1} * threshold   (soft reset, detached)
///   s_t = spike_step(v_t)
/// Rate output is (sum_t s_t) / T_s. Decay beta = sigmoid(theta) per neuron,
/// skip weight gamma = sigmoid(skip_logit).
template <typename S = float>
struct LifLayer {
  Linear<S> syn;
  BatchNorm<S> bn;
  Param<S> decay_logit;  // 1 x out, beta = sigmoid(theta)
  Param<S> skip_logit;   // 1 x 1
  int T_s = 20;
  S threshold = S(1);
  S surrogate_slope = S(25);
  bool use_skip = true;  // ablation: pass rate straight through

  LifLayer() = default;
  LifLayer(const std::string& name, Eigen::Index in, Eigen::Index out, int steps,
           Rng& rng, S beta_init = S(0.85))
      : syn(name + ".syn", in, out, rng), bn(name + ".bn", out), T_s(steps) {
    // theta so sigmoid(theta) == beta_init
    S theta0 = S(std::log(double(beta_init) / (1.0 - double(beta_init))));
    decay_logit = Param<S>{name + ".decay_logit",
                           Var<S>::leaf(Mat<S>::Constant(1, out, theta0), true), true};
    // Residual-dominant start (gamma ~ 0.88): the skip path carries clean
    // gradients early while the spiking path's surrogate gradients catch up.
    skip_logit = Param<S>{name + ".skip_logit", Var<S>::scalar(S(2), true), true};
  }

  Var<S> beta() const { return sigmoid(decay_logit.var); }
  Var<S> gamma() const { return sigmoid(skip_logit.var); }

  /// Returns the rate code in [0, 1]. Spikes are counted into `stats` (layer
  /// index `layer_idx`) when provided; counts are exact in hard-spike mode.
  Var<S> forward(const Var<S>& x, bool train, SpikeStats* stats = nullptr,
                 size_t layer_idx = 0) {
    Var<S> current = bn.forward(syn.forward(x), train);
    if (!current.value().allFinite())
      throw NonFiniteError("lif_forward: non-finite synaptic current");
    Var<S> beta_row = beta();
    const Eigen::Index batch = x.rows(), out = syn.out_dim();
    Var<S> v = Var<S>::zeros(batch, out);
    Var<S> prev_spike;
    Var<S> acc;
    double spike_sum = 0.0;
    for (int t = 0; t < T_s; ++t) {
      v = add(mul_rowwise(v, beta_row), current);
      // The reset is gradient-detached in hard mode; the smooth test mode
      // keeps it differentiable so finite differences see the same function.
      if (prev_spike.defined())
        v = sub(v, scale(g_smooth_spike_forward ? prev_spike : detach(prev_spike),
                         threshold));
      Var<S> s = spike_step(v, threshold, surrogate_slope);
      spike_sum += double(s.value().sum());
      acc = acc.defined() ? add(acc, s) : s;
      prev_spike = s;
    }
    if (stats && !g_smooth_spike_forward)
      stats->add(layer_idx, std::uint64_t(std::llround(spike_sum)));
    return scale(acc, S(1) / S(T_s));
  }

  /// Rate output followed by the residual skip combination (identity widths).
  Var<S> forward_with_skip(const Var<S>& x, bool train, SpikeStats* stats = nullptr,
                           size_t layer_idx = 0) {
    Var<S> rate = forward(x, train, stats, layer_idx);
    if (!use_skip) return rate;
    return skip_combine(rate, x, gamma());
  }

  void collect(ParamSet<S>& ps, const std::string& prefix) {
    syn.collect(ps);
    bn.collect(ps, prefix + ".bn");
    ps.add(decay_logit);
    ps.add(skip_logit);
  }
};

}  // namespace scno
