// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "scno/params.hpp"
#include "scno/tensor.hpp"

namespace scno {

struct OptimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// AdamW with decoupled weight decay. Moment buffers are keyed by position in
/// the attached parameter list; frozen (non-trainable) parameters are skipped.
template <typename S = float>
class AdamW {
 public:
  struct Config {
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    S weight_decay = S(0);
  };

  AdamW(std::vector<Param<S>*> params, Config cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.push_back(Mat<S>::Zero(p->var.rows(), p->var.cols()));
      v_.push_back(Mat<S>::Zero(p->var.rows(), p->var.cols()));
    }
  }

  std::int64_t step_count() const { return t_; }

  void zero_grad() {
    for (auto* p : params_) p->var.clear_grad();
  }

  void step(S lr) {
    ++t_;
    const S bc1 = S(1) - std::pow(cfg_.beta1, S(t_));
    const S bc2 = S(1) - std::pow(cfg_.beta2, S(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Param<S>& p = *params_[i];
      if (!p.trainable) continue;
      Mat<S> g = p.var.has_grad() ? p.var.grad()
                                  : Mat<S>::Zero(p.var.rows(), p.var.cols());
      if (g.rows() != p.var.rows() || g.cols() != p.var.cols())
        throw OptimError("adamw: gradient shape mismatch for " + p.name);
      if (!g.allFinite()) throw OptimError("adamw: non-finite gradient in " + p.name);
      m_[i] = cfg_.beta1 * m_[i] + (S(1) - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i].array() + (S(1) - cfg_.beta2) * g.array().square();
      Mat<S>& w = p.var.mutable_value();
      if (cfg_.weight_decay != S(0)) w -= lr * cfg_.weight_decay * w;
      w.array() -=
          lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

 private:
  std::vector<Param<S>*> params_;
  Config cfg_;
  std::vector<Mat<S>> m_, v_;
  std::int64_t t_ = 0;
};

/// Learning-rate schedule. Two variants:
///  - cosine: half-cosine from the initial LR down to a floor over `period`
///    epochs, constant at the floor afterwards.
///  - plateau: multiply by `factor` after `patience` epochs without metric
///    improvement; milestone epochs act as a fallback that fires only if no
///    plateau reduction happened yet and the metric is currently stalled
///    (or always, with unconditional_milestones).
class LrSchedule {
 public:
  enum class Kind { Cosine, Plateau };

  struct Config {
    Kind kind = Kind::Plateau;
    double initial_lr = 1e-3;
    // cosine
    int period = 300;
    double floor_lr = 1e-5;
    // plateau
    double factor = 0.5;
    int patience = 30;
    std::vector<int> milestones;
    bool unconditional_milestones = false;
    double min_improvement = 0.0;
  };

  explicit LrSchedule(Config cfg) : cfg_(cfg), lr_(cfg.initial_lr) {
    if (cfg_.initial_lr <= 0) throw OptimError("schedule: initial LR must be positive");
  }

  /// Returns the LR for this epoch. The plateau variant requires a metric.
  double step(int epoch, std::optional<double> metric = std::nullopt) {
    if (epoch < 0) throw OptimError("schedule: negative epoch");
    if (cfg_.kind == Kind::Cosine) {
      double frac = cfg_.period > 0
                        ? double(std::min(epoch, cfg_.period)) / double(cfg_.period)
                        : 1.0;
      lr_ = cfg_.floor_lr +
            0.5 * (cfg_.initial_lr - cfg_.floor_lr) * (1.0 + std::cos(M_PI * frac));
      return lr_;
    }
    if (!metric.has_value())
      throw OptimError("schedule: plateau variant requires a metric");
    if (!best_.has_value() || *metric < *best_ - cfg_.min_improvement) {
      best_ = *metric;
      since_improve_ = 0;
    } else {
      ++since_improve_;
    }
    if (since_improve_ >= cfg_.patience) {
      lr_ *= cfg_.factor;
      since_improve_ = 0;
      plateau_fired_ = true;
    }
    for (int mstone : cfg_.milestones) {
      if (epoch == mstone) {
        if (cfg_.unconditional_milestones ||
            (!plateau_fired_ && since_improve_ > 0))
          lr_ *= cfg_.factor;
      }
    }
    lr_ = std::min(lr_, cfg_.initial_lr);
    return lr_;
  }

  double current() const { return lr_; }

 private:
  Config cfg_;
  double lr_;
  std::optional<double> best_;
  int since_improve_ = 0;
  bool plateau_fired_ = false;
};

}  // namespace scno
