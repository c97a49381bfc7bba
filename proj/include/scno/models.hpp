// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scno/lif.hpp"
#include "scno/nn.hpp"
#include "scno/params.hpp"
#include "scno/rng.hpp"
#include "scno/tensor.hpp"

namespace scno {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using F = float;
using VarF = Var<F>;
using MatF = Mat<F>;

/// Elementary operator tags for the block library.
enum class OperatorTag { Convection, Diffusion, Reaction };

inline std::string op_tag_name(OperatorTag t) {
  switch (t) {
    case OperatorTag::Convection: return "conv";
    case OperatorTag::Diffusion: return "diff";
    case OperatorTag::Reaction: return "react";
  }
  return "?";
}

inline OperatorTag parse_op_tag(const std::string& s) {
  if (s == "conv") return OperatorTag::Convection;
  if (s == "diff") return OperatorTag::Diffusion;
  if (s == "react") return OperatorTag::Reaction;
  throw ModelError("unknown operator tag '" + s + "' (valid: conv, diff, react)");
}

/// Convection transports waves; it gets more LIF timesteps.
inline int timesteps_for_tag(OperatorTag t) {
  return t == OperatorTag::Convection ? 30 : 20;
}

/// First trunk layer starts with frequencies up to ~5 Fourier modes so the
/// basis can resolve the input spectrum from the first epochs. The output
/// layer starts damped so the initial loss is near the target variance
/// rather than dominated by a large random basis.
inline constexpr float kTrunkFreqScale = 30.0f;
inline constexpr float kTrunkOutDamping = 0.1f;

struct BlockConfig {
  int m = 256;           // input grid size
  int hidden = 256;      // LIF layer width
  int latent = 128;      // branch/trunk latent dimension p
  int n_lif_layers = 3;
  int trunk_hidden = 256;
  int trunk_layers = 3;  // hidden tanh layers
  int T_s = 20;
  float beta_init = 0.85f;
  bool ablate_skip_and_beta = false;  // fixed beta, no skip combination
};

/// Spiking DeepONet: branch = linear projection -> LIF stack with skip ->
/// linear readout to coefficients b; trunk = tanh MLP y -> t(y); output
/// b . t(y) + b0.
class SpikingDeepOnetBlock {
 public:
  SpikingDeepOnetBlock(const BlockConfig& cfg, std::uint64_t seed,
                       std::optional<OperatorTag> tag = std::nullopt)
      : cfg_(cfg), tag_(tag) {
    Rng rng(Rng::splitmix64(seed ^ 0x5eed0b10c5ULL));
    proj_ = Linear<F>("branch.proj", cfg.m, cfg.hidden, rng);
    for (int i = 0; i < cfg.n_lif_layers; ++i) {
      lif_.emplace_back("branch.lif" + std::to_string(i), cfg.hidden, cfg.hidden,
                        cfg.T_s, rng, cfg.beta_init);
      if (cfg.ablate_skip_and_beta) lif_.back().use_skip = false;
    }
    readout_ = Linear<F>("branch.readout", cfg.hidden, cfg.latent, rng);
    b0_ = Param<F>{"branch.b0", VarF::scalar(0.f, true), true};

    int in = 1;
    for (int i = 0; i < cfg.trunk_layers; ++i) {
      trunk_.emplace_back("trunk.l" + std::to_string(i), in, cfg.trunk_hidden, rng);
      in = cfg.trunk_hidden;
    }
    trunk_.emplace_back("trunk.out", in, cfg.latent, rng);
    trunk_.front().frequency_init(rng, kTrunkFreqScale);
    trunk_.back().weight.var.mutable_value() *= kTrunkOutDamping;

    if (cfg.ablate_skip_and_beta) {
      for (auto& l : lif_) {
        l.decay_logit.trainable = false;
        l.decay_logit.var.set_requires_grad(false);
        l.skip_logit.trainable = false;
        l.skip_logit.var.set_requires_grad(false);
      }
    }
  }

  const BlockConfig& config() const { return cfg_; }
  std::optional<OperatorTag> tag() const { return tag_; }
  void set_tag(OperatorTag t) { tag_ = t; }
  bool frozen() const { return frozen_; }

  /// Branch coefficients for a batch of input functions.
  VarF branch(const VarF& u0, bool train, SpikeStats* stats = nullptr) {
    const bool t = train && !frozen_;
    VarF x = proj_.forward(u0);
    for (size_t i = 0; i < lif_.size(); ++i)
      x = lif_[i].forward_with_skip(x, t, stats, i);
    return readout_.forward(x);
  }

  /// Trunk basis t(y) for query coordinates y (q x 1).
  VarF trunk(const VarF& y) const {
    VarF h = y;
    for (size_t i = 0; i + 1 < trunk_.size(); ++i)
      h = tanh_op(trunk_[i].forward(h));
    return trunk_.back().forward(h);
  }

  /// u0: batch x m, y: q x 1 -> batch x q predictions.
  VarF forward(const VarF& u0, const VarF& y, bool train, SpikeStats* stats = nullptr) {
    if (u0.cols() != cfg_.m) throw ShapeError("block_forward: u0 width != m");
    VarF b = branch(u0, train, stats);
    VarF t = trunk(y);
    VarF out = add_scalar(matmul_nt(b, t), b0_.var);
    if (!out.value().allFinite())
      throw NonFiniteError("block_forward: non-finite output");
    return out;
  }

  ParamSet<F>& params() {
    if (ps_.params.empty()) {
      proj_.collect(ps_);
      for (size_t i = 0; i < lif_.size(); ++i)
        lif_[i].collect(ps_, "branch.lif" + std::to_string(i));
      readout_.collect(ps_);
      ps_.add(b0_);
      for (auto& l : trunk_) l.collect(ps_);
    }
    return ps_;
  }

  void freeze() {
    params().freeze();
    frozen_ = true;
  }

  std::vector<LifLayer<F>>& lif_layers() { return lif_; }
  Linear<F>& readout() { return readout_; }
  Param<F>& b0() { return b0_; }

 private:
  BlockConfig cfg_;
  std::optional<OperatorTag> tag_;
  bool frozen_ = false;
  Linear<F> proj_;
  std::vector<LifLayer<F>> lif_;
  Linear<F> readout_;
  Param<F> b0_;
  std::vector<Linear<F>> trunk_;
  ParamSet<F> ps_;
};

struct AnnConfig {
  int m = 256;
  int hidden = 256;
  int latent = 128;
  int branch_layers = 3;
  int trunk_hidden = 256;
  int trunk_layers = 3;
};

/// Standard DeepONet baseline: ReLU + batchnorm branch, tanh trunk.
class AnnDeepOnet {
 public:
  AnnDeepOnet(const AnnConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(Rng::splitmix64(seed ^ 0xa22deed5ULL));
    int in = cfg.m;
    for (int i = 0; i < cfg.branch_layers; ++i) {
      branch_.emplace_back("branch.l" + std::to_string(i), in, cfg.hidden, rng);
      bn_.emplace_back("branch.bn" + std::to_string(i), cfg.hidden);
      in = cfg.hidden;
    }
    readout_ = Linear<F>("branch.readout", in, cfg.latent, rng);
    b0_ = Param<F>{"branch.b0", VarF::scalar(0.f, true), true};
    in = 1;
    for (int i = 0; i < cfg.trunk_layers; ++i) {
      trunk_.emplace_back("trunk.l" + std::to_string(i), in, cfg.trunk_hidden, rng);
      in = cfg.trunk_hidden;
    }
    trunk_.emplace_back("trunk.out", in, cfg.latent, rng);
    trunk_.front().frequency_init(rng, kTrunkFreqScale);
    trunk_.back().weight.var.mutable_value() *= kTrunkOutDamping;
  }

  const AnnConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }

  VarF forward(const VarF& u0, const VarF& y, bool train) {
    const bool t = train && !frozen_;
    VarF x = u0;
    for (size_t i = 0; i < branch_.size(); ++i)
      x = relu(bn_[i].forward(branch_[i].forward(x), t));
    VarF b = readout_.forward(x);
    VarF h = y;
    for (size_t i = 0; i + 1 < trunk_.size(); ++i)
      h = tanh_op(trunk_[i].forward(h));
    VarF tr = trunk_.back().forward(h);
    return add_scalar(matmul_nt(b, tr), b0_.var);
  }

  ParamSet<F>& params() {
    if (ps_.params.empty()) {
      for (size_t i = 0; i < branch_.size(); ++i) {
        branch_[i].collect(ps_);
        bn_[i].collect(ps_, "branch.bn" + std::to_string(i));
      }
      readout_.collect(ps_);
      ps_.add(b0_);
      for (auto& l : trunk_) l.collect(ps_);
    }
    return ps_;
  }

  void freeze() {
    params().freeze();
    frozen_ = true;
  }

 private:
  AnnConfig cfg_;
  bool frozen_ = false;
  std::vector<Linear<F>> branch_;
  std::vector<BatchNorm<F>> bn_;
  Linear<F> readout_;
  Param<F> b0_;
  std::vector<Linear<F>> trunk_;
  ParamSet<F> ps_;
};

struct ParamCounts {
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
  std::int64_t total() const { return trainable + frozen; }
};

template <typename Model>
ParamCounts param_count(Model& model) {
  ParamCounts c;
  for (auto* p : model.params().params) {
    if (p->trainable)
      c.trainable += p->var.size();
    else
      c.frozen += p->var.size();
  }
  return c;
}

/// Ordered map from operator tag to a frozen block. Insertion freezes;
/// existing entries are never mutated.
class BlockLibrary {
 public:
  void add_block(OperatorTag tag, std::shared_ptr<SpikingDeepOnetBlock> block) {
    if (blocks_.count(tag))
      throw ModelError("block library: duplicate tag '" + op_tag_name(tag) + "'");
    block->set_tag(tag);
    block->freeze();
    blocks_[tag] = std::move(block);
    order_.push_back(tag);
  }
  bool has(OperatorTag tag) const { return blocks_.count(tag) != 0; }
  SpikingDeepOnetBlock& at(OperatorTag tag) const {
    auto it = blocks_.find(tag);
    if (it == blocks_.end())
      throw ModelError("block library: missing tag '" + op_tag_name(tag) + "'");
    return *it->second;
  }
  std::shared_ptr<SpikingDeepOnetBlock> share(OperatorTag tag) const {
    at(tag);
    return blocks_.at(tag);
  }
  const std::vector<OperatorTag>& tags() const { return order_; }
  size_t size() const { return blocks_.size(); }

 private:
  std::map<OperatorTag, std::shared_ptr<SpikingDeepOnetBlock>> blocks_;
  std::vector<OperatorTag> order_;
};

}  // namespace scno
