// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scno/models.hpp"
#include "scno/pde.hpp"

namespace scno {

/// Block composition per coupled PDE family.
inline std::vector<OperatorTag> blocks_for_family(FamilyTag f) {
  switch (f) {
    case FamilyTag::Convection: return {OperatorTag::Convection};
    case FamilyTag::Diffusion: return {OperatorTag::Diffusion};
    case FamilyTag::Reaction: return {OperatorTag::Reaction};
    case FamilyTag::ConvDiff: return {OperatorTag::Convection, OperatorTag::Diffusion};
    case FamilyTag::ReactDiff: return {OperatorTag::Reaction, OperatorTag::Diffusion};
    case FamilyTag::NeutronDiff: return {OperatorTag::Diffusion, OperatorTag::Reaction};
    case FamilyTag::Burgers: return {OperatorTag::Convection, OperatorTag::Diffusion};
    case FamilyTag::AdvReact: return {OperatorTag::Convection, OperatorTag::Reaction};
  }
  return {};
}

struct AggregatorConfig {
  int m = 256;
  int K = 2;            // participating blocks
  int context_dim = 64;
  int ctx_hidden = 256;
  int hidden = 256;     // combiner width
  int layers = 3;       // combiner GELU layers
};

/// Input-conditioned gated combiner of block outputs:
///   u_hat(y) = sig(g) * MLP([o(y); c]) + (1 - sig(g)) * w . o(y)
/// with context c = f_ctx(u0) computed once per sample and broadcast over
/// queries.
class Aggregator {
 public:
  Aggregator(const AggregatorConfig& cfg, std::vector<OperatorTag> tags,
             std::uint64_t seed)
      : cfg_(cfg), tags_(std::move(tags)) {
    if (int(tags_.size()) != cfg.K)
      throw ModelError("aggregator: tag count != K");
    Rng rng(Rng::splitmix64(seed ^ 0xa88888ULL));
    ctx1_ = Linear<F>("ctx.l0", cfg.m, cfg.ctx_hidden, rng);
    ctx2_ = Linear<F>("ctx.l1", cfg.ctx_hidden, cfg.context_dim, rng);
    int in = cfg.K + cfg.context_dim;
    for (int i = 0; i < cfg.layers; ++i) {
      mlp_.emplace_back("mlp.l" + std::to_string(i), in, cfg.hidden, rng);
      in = cfg.hidden;
    }
    mlp_.emplace_back("mlp.out", in, 1, rng);
    // linear path starts as a uniform average
    linear_w_ = Param<F>{"linear_w",
                         VarF::leaf(MatF::Constant(1, cfg.K, F(1) / F(cfg.K)), true),
                         true};
    gate_logit_ = Param<F>{"gate_logit", VarF::scalar(0.f, true), true};
  }

  const AggregatorConfig& config() const { return cfg_; }
  const std::vector<OperatorTag>& tags() const { return tags_; }
  bool frozen() const { return frozen_; }
  float gate_value() const { return 1.f / (1.f + std::exp(-gate_logit_.var.item())); }
  Param<F>& gate_logit() { return gate_logit_; }
  Param<F>& linear_w() { return linear_w_; }

  VarF context(const VarF& u0) const { return ctx2_.forward(gelu(ctx1_.forward(u0))); }

  /// block_outputs: K tensors of shape batch x q. Output batch x q.
  VarF forward(const std::vector<VarF>& block_outputs, const VarF& u0) const {
    if (int(block_outputs.size()) != cfg_.K)
      throw ModelError("aggregate: block output count != K");
    const Eigen::Index batch = u0.rows();
    const Eigen::Index q = block_outputs[0].cols();
    VarF c = context(u0);

    // Flatten batch x q to (batch*q) x 1 (column-major: sample-major within
    // each query) and tile the context to match.
    VarF X = reshape(block_outputs[0], batch * q, 1);
    for (int k = 1; k < cfg_.K; ++k)
      X = concat_cols(X, reshape(block_outputs[k], batch * q, 1));
    X = concat_cols(X, tile_rows(c, q));
    VarF h = X;
    for (size_t i = 0; i + 1 < mlp_.size(); ++i) h = gelu(mlp_[i].forward(h));
    VarF mlp_out = reshape(mlp_.back().forward(h), batch, q);

    VarF lin = mul_scalar(block_outputs[0], slice_cols(linear_w_.var, 0, 1));
    for (int k = 1; k < cfg_.K; ++k)
      lin = add(lin, mul_scalar(block_outputs[k], slice_cols(linear_w_.var, k, 1)));

    VarF s = sigmoid(gate_logit_.var);
    VarF one_minus = sub(VarF::scalar(1.f), s);
    VarF out = add(mul_scalar(mlp_out, s), mul_scalar(lin, one_minus));
    if (!out.value().allFinite()) throw NonFiniteError("aggregate: non-finite output");
    return out;
  }

  ParamSet<F>& params() {
    if (ps_.params.empty()) {
      ctx1_.collect(ps_);
      ctx2_.collect(ps_);
      for (auto& l : mlp_) l.collect(ps_);
      ps_.add(linear_w_);
      ps_.add(gate_logit_);
    }
    return ps_;
  }

  void freeze() {
    params().freeze();
    frozen_ = true;
  }

 private:
  AggregatorConfig cfg_;
  std::vector<OperatorTag> tags_;
  bool frozen_ = false;
  Linear<F> ctx1_, ctx2_;
  std::vector<Linear<F>> mlp_;
  Param<F> linear_w_;
  Param<F> gate_logit_;
  ParamSet<F> ps_;
};

struct CorrectionConfig {
  int m = 256;
  int context_dim = 64;
  int ctx_hidden = 128;
  int hidden = 128;
  int layers = 3;
  int harmonics = 8;  // sin/cos pairs in the coordinate featurizer
  float alpha_init = 0.1f;
};

/// Residual network C(u0, y) on [compressed context || coordinate features],
/// scaled by a learnable alpha.
class CorrectionNet {
 public:
  CorrectionNet(const CorrectionConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(Rng::splitmix64(seed ^ 0xc011ec7ULL));
    ctx1_ = Linear<F>("ctx.l0", cfg.m, cfg.ctx_hidden, rng);
    ctx2_ = Linear<F>("ctx.l1", cfg.ctx_hidden, cfg.context_dim, rng);
    int in = cfg.context_dim + feature_dim();
    for (int i = 0; i < cfg.layers; ++i) {
      core_.emplace_back("core.l" + std::to_string(i), in, cfg.hidden, rng);
      in = cfg.hidden;
    }
    core_.emplace_back("core.out", in, 1, rng);
    alpha_ = Param<F>{"alpha", VarF::scalar(cfg.alpha_init, true), true};
  }

  int feature_dim() const { return 1 + 2 * cfg_.harmonics; }
  const CorrectionConfig& config() const { return cfg_; }
  Param<F>& alpha() { return alpha_; }
  float alpha_value() const { return alpha_.var.item(); }
  bool frozen() const { return frozen_; }

  /// y -> [y, sin(2 pi n y), cos(2 pi n y) for n = 1..harmonics].
  MatF coordinate_features(const MatF& y) const {
    MatF f(y.rows(), feature_dim());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      f(i, 0) = y(i, 0);
      for (int n = 1; n <= cfg_.harmonics; ++n) {
        f(i, 2 * n - 1) = std::sin(2.f * float(M_PI) * n * y(i, 0));
        f(i, 2 * n) = std::cos(2.f * float(M_PI) * n * y(i, 0));
      }
    }
    return f;
  }

  /// u0: batch x m, y: q x 1 -> batch x q residual (unscaled by alpha).
  VarF forward(const VarF& u0, const VarF& y) const {
    const Eigen::Index batch = u0.rows();
    const Eigen::Index q = y.rows();
    VarF ctx = ctx2_.forward(gelu(ctx1_.forward(u0)));
    // Row r = k * batch + i of the flattened input pairs sample i with query k.
    MatF feats = coordinate_features(y.value());
    MatF big(batch * q, feature_dim());
    for (Eigen::Index k = 0; k < q; ++k)
      big.middleRows(k * batch, batch) = feats.row(k).replicate(batch, 1);
    VarF X = concat_cols(tile_rows(ctx, q), VarF::constant(std::move(big)));
    VarF h = X;
    for (size_t i = 0; i + 1 < core_.size(); ++i) h = gelu(core_[i].forward(h));
    return reshape(core_.back().forward(h), batch, q);
  }

  ParamSet<F>& params() {
    if (ps_.params.empty()) {
      ctx1_.collect(ps_);
      ctx2_.collect(ps_);
      for (auto& l : core_) l.collect(ps_);
      ps_.add(alpha_);
    }
    return ps_;
  }

  void freeze() {
    params().freeze();
    frozen_ = true;
  }

 private:
  CorrectionConfig cfg_;
  bool frozen_ = false;
  Linear<F> ctx1_, ctx2_;
  std::vector<Linear<F>> core_;
  Param<F> alpha_;
  ParamSet<F> ps_;
};

/// Assembled model: frozen block library + aggregator + optional correction.
class ScnoModel {
 public:
  ScnoModel(const BlockLibrary& lib, std::vector<OperatorTag> tags,
            std::shared_ptr<Aggregator> agg,
            std::shared_ptr<CorrectionNet> corr = nullptr)
      : tags_(std::move(tags)), agg_(std::move(agg)), corr_(std::move(corr)) {
    for (OperatorTag t : tags_) blocks_.push_back(lib.share(t));
    for (auto& b : blocks_)
      if (!b->frozen()) throw ModelError("scno: participating blocks must be frozen");
  }

  const std::vector<OperatorTag>& tags() const { return tags_; }
  Aggregator& aggregator() { return *agg_; }
  std::shared_ptr<Aggregator> aggregator_ptr() { return agg_; }
  CorrectionNet* correction() { return corr_.get(); }
  std::shared_ptr<CorrectionNet> correction_ptr() { return corr_; }
  void set_correction(std::shared_ptr<CorrectionNet> c) { corr_ = std::move(c); }
  std::vector<std::shared_ptr<SpikingDeepOnetBlock>>& blocks() { return blocks_; }

  std::vector<VarF> block_outputs(const VarF& u0, const VarF& y,
                                  SpikeStats* stats = nullptr) {
    std::vector<VarF> outs;
    outs.reserve(blocks_.size());
    for (auto& b : blocks_) outs.push_back(b->forward(u0, y, false, stats));
    return outs;
  }

  VarF forward(const VarF& u0, const VarF& y, SpikeStats* stats = nullptr) {
    return forward_precomputed(block_outputs(u0, y, stats), u0, y);
  }

  /// Forward over already-computed (frozen, constant) block outputs.
  VarF forward_precomputed(const std::vector<VarF>& block_outs, const VarF& u0,
                           const VarF& y) {
    VarF out = agg_->forward(block_outs, u0);
    if (corr_) out = add(out, mul_scalar(corr_->forward(u0, y), corr_->alpha().var));
    if (!out.value().allFinite()) throw NonFiniteError("scno_forward: non-finite output");
    return out;
  }

 private:
  std::vector<OperatorTag> tags_;
  std::vector<std::shared_ptr<SpikingDeepOnetBlock>> blocks_;
  std::shared_ptr<Aggregator> agg_;
  std::shared_ptr<CorrectionNet> corr_;
};

}  // namespace scno
