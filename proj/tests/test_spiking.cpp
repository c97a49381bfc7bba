// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "scno/lif.hpp"
#include "scno/nn.hpp"
#include "scno/rng.hpp"

using namespace scno;
using VarF = Var<float>;
using MatF = Mat<float>;

namespace {

/// LIF layer with identity-free plumbing: zero synaptic weight, fixed bias
/// current, batchnorm off, so the membrane dynamics are exactly
/// v_t = beta v_{t-1} + I - s_{t-1}.
LifLayer<float> constant_current_layer(float current, float decay_logit, int T_s,
                                       Eigen::Index width = 4) {
  Rng rng(1);
  LifLayer<float> l("l", width, width, T_s, rng);
  l.bn.disabled = true;
  l.syn.weight.var.mutable_value().setZero();
  l.syn.bias.var.mutable_value().setConstant(current);
  l.decay_logit.var.mutable_value().setConstant(decay_logit);
  return l;
}

}  // namespace

TEST_CASE("beta ~ 0 with current 2x threshold spikes every step: rate 1") {
  // decay logit -100 -> beta underflows to 0
  auto l = constant_current_layer(2.0f, -100.0f, 10);
  VarF x = VarF::zeros(2, 4);
  SpikeStats stats;
  VarF rate = l.forward(x, false, &stats);
  for (Eigen::Index i = 0; i < rate.value().size(); ++i)
    CHECK(rate.value().data()[i] == 1.0f);
  CHECK(stats.total == 2 * 4 * 10);
}

TEST_CASE("beta 0.85 with current 0.1 never reaches threshold: rate 0") {
  // steady state I / (1 - beta) = 2/3 < 1
  float theta = std::log(0.85f / 0.15f);
  auto l = constant_current_layer(0.1f, theta, 20);
  VarF x = VarF::zeros(1, 4);
  SpikeStats stats;
  VarF rate = l.forward(x, false, &stats);
  CHECK(rate.value().maxCoeff() == 0.0f);
  CHECK(stats.total == 0);
}

TEST_CASE("soft reset: current exactly at threshold spikes every other step") {
  // beta ~ 0, I = 1: v alternates 1 (spike), then 1 - 1 = 0 (no spike)
  auto l = constant_current_layer(1.0f, -100.0f, 20);
  VarF rate = l.forward(VarF::zeros(1, 4), false);
  CHECK(rate.value()(0, 0) == doctest::Approx(0.5f));
}

TEST_CASE("rate code is bounded in [0, 1] under random drive") {
  Rng rng(7);
  LifLayer<float> l("l", 8, 8, 15, rng);
  l.bn.disabled = true;
  MatF x(5, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = float(rng.normal() * 3.0);
  VarF rate = l.forward(VarF::constant(x), false);
  CHECK(rate.value().minCoeff() >= 0.0f);
  CHECK(rate.value().maxCoeff() <= 1.0f);
}

TEST_CASE("spike count is monotone in the drive current") {
  std::uint64_t prev = 0;
  for (float current : {0.2f, 0.6f, 1.0f, 1.4f, 1.8f}) {
    auto l = constant_current_layer(current, std::log(0.85f / 0.15f), 20);
    SpikeStats stats;
    l.forward(VarF::zeros(1, 4), false, &stats);
    CHECK(stats.total >= prev);
    prev = stats.total;
  }
  CHECK(prev > 0);
}

TEST_CASE("spike accounting equals an independent recount from the rate output") {
  Rng rng(19);
  LifLayer<float> l("l", 6, 6, 20, rng);
  l.bn.disabled = true;
  MatF x(3, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = float(rng.normal());
  SpikeStats stats;
  VarF rate = l.forward(VarF::constant(x), false, &stats, 2);
  // rate = total spikes / T_s per neuron, so the counter must equal the
  // rounded rate sum times T_s
  double recount = double(rate.value().sum()) * 20.0;
  CHECK(stats.total == std::uint64_t(std::llround(recount)));
  CHECK(stats.per_layer.size() == 3);
  CHECK(stats.per_layer[2] == stats.total);
}

TEST_CASE("skip_combine limits and convexity") {
  MatF r(1, 2), x(1, 2);
  r << 0.2f, 0.8f;
  x << 1.0f, -1.0f;
  VarF rate = VarF::constant(r), in = VarF::constant(x);
  CHECK(skip_combine(rate, in, VarF::scalar(0.0f)).value() == r);
  CHECK(skip_combine(rate, in, VarF::scalar(1.0f)).value() == x);
  MatF mid = skip_combine(rate, in, VarF::scalar(0.5f)).value();
  CHECK(mid(0, 0) == doctest::Approx(0.6f));
  CHECK(mid(0, 1) == doctest::Approx(-0.1f));
  VarF bad = VarF::zeros(2, 2);
  CHECK_THROWS_AS(skip_combine(rate, bad, VarF::scalar(0.5f)), ShapeError);
}

TEST_CASE("batchnorm train mode normalizes each feature to mean 0, unit variance") {
  BatchNorm<float> bn("bn", 3);
  MatF x(4, 3);
  x << 1, 10, -5, 2, 20, -3, 3, 30, -1, 4, 40, 1;
  VarF y = bn.forward(VarF::constant(x), true);
  for (int j = 0; j < 3; ++j) {
    float mean = y.value().col(j).mean();
    float var = (y.value().col(j).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-5f);
    CHECK(var == doctest::Approx(1.0f).epsilon(1e-3));
  }
}

TEST_CASE("batchnorm rejects train batches smaller than 2") {
  BatchNorm<float> bn("bn", 3);
  CHECK_THROWS_AS(bn.forward(VarF::zeros(1, 3), true), BatchNormError);
}

TEST_CASE("batchnorm eval mode uses running statistics, not the batch") {
  BatchNorm<float> bn("bn", 2);
  MatF x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  bn.forward(VarF::constant(x), true);  // updates running stats
  MatF probe(2, 2);
  probe << 100, 100, 100, 100;
  VarF y1 = bn.forward(VarF::constant(probe), false);
  VarF y2 = bn.forward(VarF::constant(probe), false);
  CHECK(y1.value() == y2.value());
  // identical inputs map identically regardless of batch composition
  MatF mixed(2, 2);
  mixed << 100, 100, -7, 3;
  VarF y3 = bn.forward(VarF::constant(mixed), false);
  CHECK(y3.value()(0, 0) == y1.value()(0, 0));
}

TEST_CASE("gradcheck through one smooth-mode LIF layer") {
  SmoothSpikeGuard guard;
  Rng rng(23);
  LifLayer<double> l("l", 3, 3, 5, rng, 0.85);
  l.surrogate_slope = 5.0;
  Mat<double> x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Var<double> xv = Var<double>::constant(x);
  auto f = [&] { return mean(l.forward_with_skip(xv, true)); };
  double err = scno::test::gradcheck(
      {&l.syn.weight.var, &l.syn.bias.var, &l.decay_logit.var, &l.skip_logit.var,
       &l.bn.scale.var, &l.bn.shift.var},
      f);
  CHECK(err < 1e-5);
}

TEST_CASE("eval forward is deterministic bitwise") {
  Rng rng(31);
  LifLayer<float> l("l", 8, 8, 20, rng);
  MatF x(4, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = float(rng.normal());
  VarF a = l.forward_with_skip(VarF::constant(x), false);
  VarF b = l.forward_with_skip(VarF::constant(x), false);
  CHECK(std::memcmp(a.value().data(), b.value().data(),
                    sizeof(float) * a.value().size()) == 0);
}

TEST_CASE("smooth mode produces no spike counts") {
  SmoothSpikeGuard guard;
  auto l = constant_current_layer(2.0f, -100.0f, 10);
  SpikeStats stats;
  l.forward(VarF::zeros(1, 4), true, &stats);
  CHECK(stats.total == 0);
}
