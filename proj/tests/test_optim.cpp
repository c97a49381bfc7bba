// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scno/optim.hpp"
#include "scno/params.hpp"

using namespace scno;
using VarD = Var<double>;
using MatD = Mat<double>;

TEST_CASE("adamw first step moves each weight by about lr in the gradient direction") {
  Param<double> p{"w", VarD::leaf(MatD::Zero(1, 3), true), true};
  p.var.grad() = (MatD(1, 3) << 0.5, -2.0, 10.0).finished();
  AdamW<double> opt({&p});
  opt.step(1e-3);
  // bias-corrected update is lr * g / (|g| + eps) = lr * sign(g) up to eps
  CHECK(p.var.value()(0, 0) == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(p.var.value()(0, 1) == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(p.var.value()(0, 2) == doctest::Approx(-1e-3).epsilon(1e-4));
}

TEST_CASE("decoupled weight decay multiplies weights by (1 - lr * wd) before the update") {
  Param<double> p{"w", VarD::leaf(MatD::Constant(1, 1, 2.0), true), true};
  p.var.grad() = MatD::Zero(1, 1);
  AdamW<double>::Config cfg;
  cfg.weight_decay = 0.1;
  AdamW<double> opt({&p}, cfg);
  opt.step(1e-2);
  // zero gradient: only the decay acts
  CHECK(p.var.value()(0, 0) == doctest::Approx(2.0 * (1.0 - 1e-2 * 0.1)));
}

TEST_CASE("frozen parameters are not updated") {
  Param<double> p{"w", VarD::leaf(MatD::Constant(1, 1, 1.0), true), false};
  p.var.grad() = MatD::Constant(1, 1, 5.0);
  AdamW<double> opt({&p});
  opt.step(1e-3);
  CHECK(p.var.value()(0, 0) == 1.0);
}

TEST_CASE("missing gradient is treated as zero") {
  Param<double> p{"w", VarD::leaf(MatD::Constant(1, 1, 1.0), true), true};
  AdamW<double> opt({&p});
  opt.step(1e-3);
  CHECK(p.var.value()(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("non-finite gradient raises") {
  Param<double> p{"w", VarD::leaf(MatD::Constant(1, 1, 1.0), true), true};
  p.var.grad() = MatD::Constant(1, 1, std::numeric_limits<double>::quiet_NaN());
  AdamW<double> opt({&p});
  CHECK_THROWS_AS(opt.step(1e-3), OptimError);
}

TEST_CASE("cosine schedule hits the endpoints and its floor") {
  LrSchedule::Config cfg;
  cfg.kind = LrSchedule::Kind::Cosine;
  cfg.initial_lr = 1e-3;
  cfg.period = 100;
  cfg.floor_lr = 1e-5;
  LrSchedule sched(cfg);
  CHECK(sched.step(0) == doctest::Approx(1e-3));
  CHECK(sched.step(50) == doctest::Approx(1e-5 + 0.5 * (1e-3 - 1e-5)));
  CHECK(sched.step(100) == doctest::Approx(1e-5));
  CHECK(sched.step(250) == doctest::Approx(1e-5));  // constant past the period
}

TEST_CASE("plateau schedule halves after patience epochs without improvement") {
  LrSchedule::Config cfg;
  cfg.kind = LrSchedule::Kind::Plateau;
  cfg.initial_lr = 1e-3;
  cfg.factor = 0.5;
  cfg.patience = 3;
  LrSchedule sched(cfg);
  int epoch = 0;
  CHECK(sched.step(epoch++, 1.0) == doctest::Approx(1e-3));
  CHECK(sched.step(epoch++, 0.9) == doctest::Approx(1e-3));  // improving
  CHECK(sched.step(epoch++, 0.9) == doctest::Approx(1e-3));  // stall 1
  CHECK(sched.step(epoch++, 0.9) == doctest::Approx(1e-3));  // stall 2
  CHECK(sched.step(epoch++, 0.9) == doctest::Approx(5e-4));  // stall 3 fires
  CHECK(sched.step(epoch++, 0.8) == doctest::Approx(5e-4));  // new best, holds
}

TEST_CASE("milestones fire as a fallback only while stalled and before any plateau cut") {
  LrSchedule::Config cfg;
  cfg.kind = LrSchedule::Kind::Plateau;
  cfg.initial_lr = 1e-3;
  cfg.factor = 0.5;
  cfg.patience = 100;
  cfg.milestones = {3};
  SUBCASE("stalled at the milestone: fires") {
    LrSchedule sched(cfg);
    sched.step(0, 1.0);
    sched.step(1, 1.0);
    sched.step(2, 1.0);
    CHECK(sched.step(3, 1.0) == doctest::Approx(5e-4));
  }
  SUBCASE("improving through the milestone: skipped") {
    LrSchedule sched(cfg);
    sched.step(0, 1.0);
    sched.step(1, 0.9);
    sched.step(2, 0.8);
    CHECK(sched.step(3, 0.7) == doctest::Approx(1e-3));
  }
  SUBCASE("unconditional milestones always fire") {
    cfg.unconditional_milestones = true;
    LrSchedule sched(cfg);
    sched.step(0, 1.0);
    sched.step(1, 0.9);
    sched.step(2, 0.8);
    CHECK(sched.step(3, 0.7) == doctest::Approx(5e-4));
  }
}

TEST_CASE("plateau variant requires a metric") {
  LrSchedule::Config cfg;
  cfg.kind = LrSchedule::Kind::Plateau;
  LrSchedule sched(cfg);
  CHECK_THROWS_AS(sched.step(0), OptimError);
}

TEST_CASE("invalid schedule configuration") {
  LrSchedule::Config cfg;
  cfg.initial_lr = 0.0;
  CHECK_THROWS_AS(LrSchedule{cfg}, OptimError);
}

TEST_CASE("adamw converges on a quadratic bowl") {
  Param<double> p{"w", VarD::leaf(MatD::Constant(1, 2, 5.0), true), true};
  AdamW<double> opt({&p});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    VarD loss = mean(mul(p.var, p.var));
    backward(loss);
    opt.step(1e-2);
  }
  CHECK(std::abs(p.var.value()(0, 0)) < 1e-3);
  CHECK(std::abs(p.var.value()(0, 1)) < 1e-3);
}
