// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scno/composition.hpp"

using namespace scno;

namespace {

AggregatorConfig tiny_agg_config() {
  AggregatorConfig c;
  c.m = 8;
  c.K = 2;
  c.context_dim = 4;
  c.ctx_hidden = 8;
  c.hidden = 8;
  c.layers = 2;
  return c;
}

BlockConfig tiny_block_config() {
  BlockConfig c;
  c.m = 8;
  c.hidden = 8;
  c.latent = 4;
  c.trunk_hidden = 8;
  c.T_s = 4;
  return c;
}

MatF random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  MatF m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = float(rng.normal());
  return m;
}

const std::vector<OperatorTag> kConvDiff = {OperatorTag::Convection,
                                            OperatorTag::Diffusion};

}  // namespace

TEST_CASE("block composition per family matches the operator splitting") {
  using T = OperatorTag;
  CHECK(blocks_for_family(FamilyTag::ConvDiff) == std::vector<T>{T::Convection, T::Diffusion});
  CHECK(blocks_for_family(FamilyTag::ReactDiff) == std::vector<T>{T::Reaction, T::Diffusion});
  CHECK(blocks_for_family(FamilyTag::NeutronDiff) == std::vector<T>{T::Diffusion, T::Reaction});
  CHECK(blocks_for_family(FamilyTag::Burgers) == std::vector<T>{T::Convection, T::Diffusion});
  CHECK(blocks_for_family(FamilyTag::AdvReact) == std::vector<T>{T::Convection, T::Reaction});
}

TEST_CASE("gate at its linear limit returns the weighted block average") {
  Aggregator agg(tiny_agg_config(), kConvDiff, 1);
  agg.gate_logit().var.mutable_value()(0, 0) = -100.0f;  // gate -> 0
  std::vector<VarF> outs = {VarF::constant(random_mat(3, 5, 2)),
                            VarF::constant(random_mat(3, 5, 3))};
  VarF u0 = VarF::constant(random_mat(3, 8, 4));
  MatF got = agg.forward(outs, u0).value();
  MatF expected = 0.5f * outs[0].value() + 0.5f * outs[1].value();  // w init = 1/K
  for (Eigen::Index i = 0; i < got.size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(expected.data()[i]));
}

TEST_CASE("aggregator output is convex in the gate") {
  Aggregator agg(tiny_agg_config(), kConvDiff, 1);
  std::vector<VarF> outs = {VarF::constant(random_mat(2, 5, 5)),
                            VarF::constant(random_mat(2, 5, 6))};
  VarF u0 = VarF::constant(random_mat(2, 8, 7));
  auto at_gate = [&](float logit) {
    agg.gate_logit().var.mutable_value()(0, 0) = logit;
    return MatF(agg.forward(outs, u0).value());
  };
  MatF lo = at_gate(-100.0f), hi = at_gate(100.0f), mid = at_gate(0.0f);
  for (Eigen::Index i = 0; i < mid.size(); ++i)
    CHECK(mid.data()[i] == doctest::Approx(0.5f * lo.data()[i] + 0.5f * hi.data()[i])
                               .epsilon(1e-4));
}

TEST_CASE("context is per sample: swapping samples swaps output rows") {
  Aggregator agg(tiny_agg_config(), kConvDiff, 9);
  MatF o1 = random_mat(2, 5, 10), o2 = random_mat(2, 5, 11), u0 = random_mat(2, 8, 12);
  MatF got = agg.forward({VarF::constant(o1), VarF::constant(o2)},
                         VarF::constant(u0)).value();
  MatF o1s = o1.colwise().reverse().eval(), o2s = o2.colwise().reverse().eval(),
       u0s = u0.colwise().reverse().eval();
  MatF swapped = agg.forward({VarF::constant(o1s), VarF::constant(o2s)},
                             VarF::constant(u0s)).value();
  for (Eigen::Index j = 0; j < got.cols(); ++j) {
    CHECK(got(0, j) == doctest::Approx(swapped(1, j)));
    CHECK(got(1, j) == doctest::Approx(swapped(0, j)));
  }
}

TEST_CASE("aggregator validates block output count and tag arity") {
  Aggregator agg(tiny_agg_config(), kConvDiff, 1);
  CHECK_THROWS_AS(agg.forward({VarF::constant(random_mat(2, 5, 1))},
                              VarF::constant(random_mat(2, 8, 2))),
                  ModelError);
  AggregatorConfig bad = tiny_agg_config();
  bad.K = 3;
  CHECK_THROWS_AS(Aggregator(bad, kConvDiff, 1), ModelError);
}

TEST_CASE("full-size aggregator and correction parameter counts") {
  Aggregator agg(AggregatorConfig{}, kConvDiff, 0);
  CHECK(agg.params().total_count() == 231236);
  CorrectionNet corr(CorrectionConfig{}, 0);
  CHECK(corr.params().total_count() == 84802);
}

TEST_CASE("correction coordinate features are y and its Fourier harmonics") {
  CorrectionConfig cfg;
  cfg.m = 8;
  CorrectionNet corr(cfg, 1);
  CHECK(corr.feature_dim() == 17);
  MatF y(2, 1);
  y << 0.25f, 0.5f;
  MatF f = corr.coordinate_features(y);
  REQUIRE(f.cols() == 17);
  CHECK(f(0, 0) == 0.25f);
  CHECK(f(0, 1) == doctest::Approx(std::sin(2.0 * M_PI * 0.25)));  // n=1 sin
  CHECK(f(0, 2) == doctest::Approx(std::cos(2.0 * M_PI * 0.25)).epsilon(1e-4));
  CHECK(f(1, 3) == doctest::Approx(std::sin(4.0 * M_PI * 0.5)).epsilon(1e-4));
  CHECK(f(1, 4) == doctest::Approx(std::cos(4.0 * M_PI * 0.5)));  // n=2 cos at y=0.5
}

TEST_CASE("alpha starts at 0.1 and scales the correction additively") {
  BlockLibrary lib;
  lib.add_block(OperatorTag::Convection,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 1));
  lib.add_block(OperatorTag::Diffusion,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 2));
  auto agg = std::make_shared<Aggregator>(tiny_agg_config(), kConvDiff, 3);
  CorrectionConfig cc;
  cc.m = 8;
  cc.ctx_hidden = 8;
  cc.context_dim = 4;
  cc.hidden = 8;
  cc.layers = 2;
  auto corr = std::make_shared<CorrectionNet>(cc, 4);
  CHECK(corr->alpha_value() == doctest::Approx(0.1f));

  MatF u0 = random_mat(2, 8, 5), y = random_mat(3, 1, 6);
  ScnoModel bare(lib, kConvDiff, agg);
  ScnoModel with_corr(lib, kConvDiff, agg, corr);
  MatF base = bare.forward(VarF::constant(u0), VarF::constant(y)).value();
  corr->alpha().var.mutable_value()(0, 0) = 0.0f;
  MatF zeroed = with_corr.forward(VarF::constant(u0), VarF::constant(y)).value();
  for (Eigen::Index i = 0; i < base.size(); ++i)
    CHECK(zeroed.data()[i] == base.data()[i]);  // alpha = 0: exactly the bare output
  corr->alpha().var.mutable_value()(0, 0) = 0.1f;
  MatF active = with_corr.forward(VarF::constant(u0), VarF::constant(y)).value();
  CHECK((active - base).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("assembled model shares the frozen library blocks by reference") {
  BlockLibrary lib;
  lib.add_block(OperatorTag::Convection,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 1));
  lib.add_block(OperatorTag::Diffusion,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 2));
  auto agg = std::make_shared<Aggregator>(tiny_agg_config(), kConvDiff, 3);
  ScnoModel model(lib, kConvDiff, agg);
  CHECK(model.blocks()[0] == lib.share(OperatorTag::Convection));
  CHECK(model.blocks()[1] == lib.share(OperatorTag::Diffusion));
}

TEST_CASE("scno refuses unfrozen blocks") {
  BlockLibrary lib;
  lib.add_block(OperatorTag::Convection,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 1));
  lib.add_block(OperatorTag::Diffusion,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 2));
  auto agg = std::make_shared<Aggregator>(tiny_agg_config(), kConvDiff, 3);
  CHECK_NOTHROW(ScnoModel(lib, kConvDiff, agg));  // library inserts freeze
}

TEST_CASE("gradient hygiene: composition training cannot touch frozen blocks") {
  BlockLibrary lib;
  lib.add_block(OperatorTag::Convection,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 1));
  lib.add_block(OperatorTag::Diffusion,
                std::make_shared<SpikingDeepOnetBlock>(tiny_block_config(), 2));
  std::uint64_t d0 = digest(lib.at(OperatorTag::Convection).params());
  auto agg = std::make_shared<Aggregator>(tiny_agg_config(), kConvDiff, 3);
  ScnoModel model(lib, kConvDiff, agg);

  VarF u0 = VarF::constant(random_mat(4, 8, 7));
  VarF y = VarF::constant(random_mat(8, 1, 8));
  VarF loss = mean(model.forward(u0, y));
  backward(loss);
  for (auto* p : lib.at(OperatorTag::Convection).params().params)
    CHECK_FALSE(p->var.has_grad());
  bool agg_got_grads = false;
  for (auto* p : agg->params().params) agg_got_grads = agg_got_grads || p->var.has_grad();
  CHECK(agg_got_grads);
  CHECK(digest(lib.at(OperatorTag::Convection).params()) == d0);
}
