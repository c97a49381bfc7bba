// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "scno/rng.hpp"
#include "scno/tensor.hpp"

using namespace scno;
using D = double;
using VarD = Var<D>;
using MatD = Mat<D>;

namespace {

MatD random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("matmul with identity returns the operand") {
  MatD id = MatD::Identity(2, 2);
  MatD x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  VarD out = matmul(VarD::constant(id), VarD::constant(x));
  CHECK(out.value() == x);
}

TEST_CASE("analytic values of elementwise primitives") {
  VarD z = VarD::scalar(0.0);
  CHECK(tanh_op(z).item() == doctest::Approx(0.0));
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));
  CHECK(relu(VarD::scalar(-2.0)).item() == 0.0);
  CHECK(relu(VarD::scalar(2.0)).item() == 2.0);
}

TEST_CASE("gelu matches a high-precision erf-based oracle at x = 3") {
  // independent scalar oracle in long double
  long double x = 3.0L;
  long double expected = 0.5L * x * (1.0L + erfl(x / sqrtl(2.0L)));
  VarD out = gelu(VarD::scalar(3.0));
  CHECK(out.item() == doctest::Approx(double(expected)).epsilon(1e-12));
}

TEST_CASE("backward of x^2 at x = 3 gives 6") {
  VarD x = VarD::scalar(3.0, true);
  VarD loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  VarD x = VarD::leaf(MatD::Ones(2, 2), true);
  VarD y = mul(x, x);
  CHECK_THROWS_AS(backward(y), AutodiffError);
}

TEST_CASE("frozen parameter receives no grad") {
  VarD w = VarD::scalar(2.0, false);  // frozen
  VarD x = VarD::scalar(3.0, true);
  VarD loss = mul(w, x);
  backward(loss);
  CHECK_FALSE(w.has_grad());
  CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("ops with no differentiable inputs do not grow the tape") {
  VarD a = VarD::constant(MatD::Ones(2, 2));
  VarD b = mul(a, a);
  CHECK(b.node()->parents.empty());
  CHECK_FALSE(b.requires_grad());
}

TEST_CASE("shape errors") {
  VarD a = VarD::constant(MatD::Ones(2, 3));
  VarD b = VarD::constant(MatD::Ones(2, 2));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("non-finite outputs are rejected") {
  VarD a = VarD::scalar(0.0);
  CHECK_THROWS_AS(reciprocal(a), NonFiniteError);
}

TEST_CASE("gradcheck: every differentiable primitive") {
  Rng rng(7);
  VarD a = VarD::leaf(random_mat(3, 4, rng), true);
  VarD b = VarD::leaf(random_mat(3, 4, rng), true);
  VarD w = VarD::leaf(random_mat(5, 4, rng), true);
  VarD row = VarD::leaf(random_mat(1, 4, rng), true);
  VarD s = VarD::scalar(0.7, true);

  int case_idx = 0;
  auto check = [&](std::vector<VarD*> ps, std::function<VarD()> f) {
    CAPTURE(case_idx);
    ++case_idx;
    CHECK(scno::test::gradcheck(std::move(ps), f) < 1e-5);
  };

  check({&a, &w}, [&] { return mean(matmul_nt(a, w)); });
  check({&a, &w}, [&] { return mean(matmul(a, matmul_nt(VarD::constant(MatD::Identity(4, 4)), w))); });
  check({&a, &b}, [&] { return mean(mul(a, b)); });
  check({&a, &b}, [&] { return mean(add(a, b)); });
  check({&a, &b}, [&] { return mean(sub(a, b)); });
  check({&a}, [&] { return mean(neg(a)); });
  check({&a}, [&] { return mean(scale(a, 2.5)); });
  check({&a, &row}, [&] { return mean(add_rowwise(a, row)); });
  check({&a, &row}, [&] { return mean(mul_rowwise(a, row)); });
  check({&a, &s}, [&] { return mean(mul_scalar(a, s)); });
  check({&a, &s}, [&] { return mean(add_scalar(a, s)); });
  check({&a}, [&] { return mean(tanh_op(a)); });
  check({&a}, [&] { return mean(sigmoid(a)); });
  check({&a}, [&] { return mean(gelu(a)); });
  check({&a}, [&] { return sum(gelu(a)); });
  check({&a}, [&] { return mean(mul(relu(a), a)); });
  check({&a}, [&] { return mean(sqrt_op(add(mul(a, a), VarD::constant(MatD::Ones(3, 4))))); });
  check({&a}, [&] { return mean(reciprocal(add(mul(a, a), VarD::constant(MatD::Ones(3, 4))))); });
  check({&a}, [&] { return mul(sum(a), sum(a)); });
  check({&a}, [&] { return mean(colmean(mul(a, a))); });
  check({&a, &b}, [&] { return mse(a, b); });
  check({&a, &b}, [&] { return mean(concat_cols(a, b)); });
  check({&a}, [&] { return mean(mul(slice_cols(a, 1, 2), slice_cols(a, 0, 2))); });
  check({&row}, [&] { return mean(mul(broadcast_row(row, 3), a)); });
  check({&a}, [&] { return mean(mul(reshape(a, 4, 3), reshape(b, 4, 3))); });
  check({&row}, [&] { return mean(mul(tile_rows(row, 3), a)); });
}

TEST_CASE("gradcheck through a reused node (diamond DAG)") {
  Rng rng(3);
  VarD a = VarD::leaf(random_mat(2, 2, rng), true);
  auto f = [&] {
    VarD h = tanh_op(a);
    return mean(add(mul(h, h), sigmoid(h)));
  };
  CHECK(scno::test::gradcheck({&a}, f) < 1e-5);
}

TEST_CASE("gradcheck: 3-layer tanh MLP matches finite differences < 1e-6") {
  Rng rng(11);
  VarD x = VarD::leaf(random_mat(4, 6, rng), false);
  VarD w1 = VarD::leaf(random_mat(8, 6, rng, 0.5), true);
  VarD b1 = VarD::leaf(random_mat(1, 8, rng, 0.1), true);
  VarD w2 = VarD::leaf(random_mat(8, 8, rng, 0.5), true);
  VarD b2 = VarD::leaf(random_mat(1, 8, rng, 0.1), true);
  VarD w3 = VarD::leaf(random_mat(1, 8, rng, 0.5), true);
  VarD b3 = VarD::leaf(random_mat(1, 1, rng, 0.1), true);
  auto f = [&] {
    VarD h1 = tanh_op(add_rowwise(matmul_nt(x, w1), b1));
    VarD h2 = tanh_op(add_rowwise(matmul_nt(h1, w2), b2));
    VarD out = add_rowwise(matmul_nt(h2, w3), b3);
    return mean(mul(out, out));
  };
  CHECK(scno::test::gradcheck({&w1, &b1, &w2, &b2, &w3, &b3}, f) < 1e-6);
}

TEST_CASE("spike_step forward thresholding") {
  MatD v(1, 2);
  v << 1.5, 0.5;
  VarD out = spike_step(VarD::constant(v), 1.0, 25.0);
  CHECK(out.value()(0, 0) == 1.0);
  CHECK(out.value()(0, 1) == 0.0);
}

TEST_CASE("spike outputs are exactly binary in hard mode") {
  Rng rng(5);
  VarD v = VarD::leaf(random_mat(10, 10, rng, 2.0), false);
  MatD s = spike_step(v, 1.0, 25.0).value();
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    double x = s.data()[i];
    CHECK((x == 0.0 || x == 1.0));
  }
}

TEST_CASE("surrogate derivative at membrane = threshold is exactly 1") {
  for (double slope : {1.0, 25.0, 100.0}) {
    VarD v = VarD::scalar(1.0, true);  // membrane == threshold
    VarD s = spike_step(v, 1.0, slope);
    backward(s);
    CHECK(v.grad()(0, 0) == 1.0);
    v.clear_grad();
  }
}

TEST_CASE("spike_step rejects non-positive slope and threshold") {
  VarD v = VarD::scalar(0.5);
  CHECK_THROWS_AS(spike_step(v, -1.0, 25.0), AutodiffError);
  CHECK_THROWS_AS(spike_step(v, 1.0, 0.0), AutodiffError);
}

TEST_CASE("smooth spike mode: midpoint value and gradcheck consistency") {
  SmoothSpikeGuard guard;
  VarD at_threshold = VarD::scalar(1.0);
  CHECK(spike_step(at_threshold, 1.0, 25.0).item() == doctest::Approx(0.5));

  Rng rng(9);
  VarD v = VarD::leaf(random_mat(3, 3, rng), true);
  auto f = [&] { return mean(spike_step(v, 1.0, 5.0)); };
  CHECK(scno::test::gradcheck({&v}, f) < 1e-5);
}

TEST_CASE("smooth mode off by default: forward is the hard Heaviside") {
  CHECK_FALSE(g_smooth_spike_forward);
  MatD v(1, 3);
  v << 0.9, 1.0, 1.1;
  MatD s = spike_step(VarD::constant(v), 1.0, 25.0).value();
  CHECK(s(0, 0) == 0.0);
  CHECK(s(0, 1) == 1.0);
  CHECK(s(0, 2) == 1.0);
}

TEST_CASE("determinism: identical seeds give bitwise-identical passes") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Var<float> w = Var<float>::leaf(random_mat(4, 4, rng).cast<float>(), true);
    Var<float> x = Var<float>::leaf(random_mat(4, 4, rng).cast<float>(), false);
    Var<float> loss = mean(tanh_op(matmul(x, w)));
    backward(loss);
    return std::make_pair(loss.item(), Mat<float>(w.grad()));
  };
  auto [l1, g1] = run(42);
  auto [l2, g2] = run(42);
  CHECK(std::memcmp(&l1, &l2, sizeof(l1)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(float) * g1.size()) == 0);
}
