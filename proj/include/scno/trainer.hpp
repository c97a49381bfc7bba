// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "scno/composition.hpp"
#include "scno/dataset.hpp"
#include "scno/evaluator.hpp"
#include "scno/models.hpp"
#include "scno/optim.hpp"

namespace scno {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 800;
  int batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  int eval_every = 10;  // test relative-L2 logging cadence
  // plateau schedule (blocks, baselines)
  double plateau_factor = 0.5;
  int plateau_patience = 30;
  std::vector<int> milestones = {400, 600};
  bool unconditional_milestones = false;  // fire milestones regardless of metric
  // cosine schedule (aggregator, correction)
  double cosine_floor = 1e-5;
  bool verbose = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_rel_l2 = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  std::uint64_t final_digest = 0;

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    os << "epoch,loss,test_rel_l2,lr\n";
    for (const auto& e : epochs) {
      os << e.epoch << "," << e.train_loss << ",";
      if (std::isnan(e.test_rel_l2))
        os << "";
      else
        os << e.test_rel_l2;
      os << "," << e.lr << "\n";
    }
  }
};

namespace traindetail {

inline std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[size_t(rng.uniform_int(0, std::int64_t(i) - 1))]);
  return idx;
}

inline MatF gather_rows(const std::vector<std::vector<float>>& rows,
                        const std::vector<size_t>& idx, size_t start, size_t n) {
  MatF m(n, rows[0].size());
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < rows[0].size(); ++j) m(i, j) = rows[idx[start + i]][j];
  return m;
}

/// Generic minibatch loop over (u0, target) with a per-batch loss closure.
/// The closure must build the tape and return the scalar loss Var.
template <typename LossFn, typename EvalFn>
TrainRecord run_loop(const Dataset& train, const TrainConfig& cfg,
                     LrSchedule::Config sched_cfg, AdamW<F>& opt, LossFn&& batch_loss,
                     EvalFn&& test_metric) {
  auto t0 = std::chrono::steady_clock::now();
  TrainRecord record;
  LrSchedule sched(sched_cfg);
  Rng rng(Rng::splitmix64(cfg.seed ^ 0x7ea1f00dULL));
  const bool cosine = sched_cfg.kind == LrSchedule::Kind::Cosine;
  double lr = sched_cfg.initial_lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cosine) lr = sched.step(epoch);
    auto idx = shuffled_indices(train.size(), rng);
    double loss_sum = 0.0;
    size_t nb = 0;
    for (size_t start = 0; start < train.size(); start += cfg.batch_size) {
      size_t n = std::min(size_t(cfg.batch_size), train.size() - start);
      if (n < 2) continue;  // batchnorm needs batch >= 2
      opt.zero_grad();
      VarF loss = batch_loss(idx, start, n);
      double lv = double(loss.item());
      if (!std::isfinite(lv))
        throw DivergenceError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch));
      backward(loss);
      opt.step(F(lr));
      loss_sum += lv;
      ++nb;
    }
    double epoch_loss = loss_sum / double(std::max<size_t>(nb, 1));
    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = epoch_loss;
    er.lr = lr;
    if (cfg.eval_every > 0 &&
        (epoch % cfg.eval_every == 0 || epoch == cfg.epochs - 1))
      er.test_rel_l2 = test_metric();
    record.epochs.push_back(er);
    if (cfg.verbose && (epoch % 10 == 0 || epoch == cfg.epochs - 1))
      std::fprintf(stderr, "  epoch %4d  loss %.6f  test %.4f  lr %.2e\n", epoch,
                   epoch_loss, er.test_rel_l2, lr);
    if (!cosine) lr = sched.step(epoch, epoch_loss);
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

inline LrSchedule::Config plateau_config(const TrainConfig& cfg) {
  LrSchedule::Config s;
  s.kind = LrSchedule::Kind::Plateau;
  s.initial_lr = cfg.lr;
  s.factor = cfg.plateau_factor;
  s.patience = cfg.plateau_patience;
  s.milestones = cfg.milestones;
  s.unconditional_milestones = cfg.unconditional_milestones;
  return s;
}

inline LrSchedule::Config cosine_config(const TrainConfig& cfg) {
  LrSchedule::Config s;
  s.kind = LrSchedule::Kind::Cosine;
  s.initial_lr = cfg.lr;
  s.period = cfg.epochs;
  s.floor_lr = cfg.cosine_floor;
  return s;
}

}  // namespace traindetail

struct BlockTrainResult {
  std::shared_ptr<SpikingDeepOnetBlock> block;
  TrainRecord record;
};

/// Trains one elementary spiking block, then freezes it.
inline BlockTrainResult train_block(OperatorTag tag, const Dataset& train,
                                    const Dataset& test, const TrainConfig& cfg,
                                    bool ablate = false) {
  BlockConfig bc;
  bc.m = train.grid.m;
  bc.T_s = timesteps_for_tag(tag);
  bc.ablate_skip_and_beta = ablate;
  auto block = std::make_shared<SpikingDeepOnetBlock>(bc, cfg.seed, tag);

  AdamW<F>::Config oc;
  oc.weight_decay = F(cfg.weight_decay);
  std::vector<Param<F>*> trainable;
  for (auto* p : block->params().params)
    if (p->trainable) trainable.push_back(p);
  AdamW<F> opt(trainable, oc);

  MatF y = grid_queries(train.grid);
  VarF yv = VarF::constant(y);
  BlockTrainResult res;
  res.record = traindetail::run_loop(
      train, cfg, traindetail::plateau_config(cfg), opt,
      [&](const std::vector<size_t>& idx, size_t start, size_t n) {
        MatF u0 = traindetail::gather_rows(train.u0, idx, start, n);
        MatF tgt = traindetail::gather_rows(train.uT, idx, start, n);
        VarF pred = block->forward(VarF::constant(u0), yv, true);
        return mse(pred, VarF::constant(tgt));
      },
      [&]() { return evaluate_block(*block, test).mean_rel_l2; });
  block->freeze();
  res.record.final_digest = digest(block->params());
  res.block = block;
  return res;
}

/// Monolithic spiking baseline: same architecture as a block, T_s = 20,
/// trained end-to-end on a coupled PDE. Frozen on completion.
inline BlockTrainResult train_mono_baseline(const Dataset& train, const Dataset& test,
                                            const TrainConfig& cfg) {
  BlockConfig bc;
  bc.m = train.grid.m;
  bc.T_s = 20;
  auto block = std::make_shared<SpikingDeepOnetBlock>(bc, cfg.seed);

  AdamW<F>::Config oc;
  oc.weight_decay = F(cfg.weight_decay);
  AdamW<F> opt(block->params().params, oc);
  VarF yv = VarF::constant(grid_queries(train.grid));
  BlockTrainResult res;
  res.record = traindetail::run_loop(
      train, cfg, traindetail::plateau_config(cfg), opt,
      [&](const std::vector<size_t>& idx, size_t start, size_t n) {
        MatF u0 = traindetail::gather_rows(train.u0, idx, start, n);
        MatF tgt = traindetail::gather_rows(train.uT, idx, start, n);
        VarF pred = block->forward(VarF::constant(u0), yv, true);
        return mse(pred, VarF::constant(tgt));
      },
      [&]() { return evaluate_block(*block, test).mean_rel_l2; });
  block->freeze();
  res.record.final_digest = digest(block->params());
  res.block = block;
  return res;
}

struct AnnTrainResult {
  std::shared_ptr<AnnDeepOnet> model;
  TrainRecord record;
};

inline AnnTrainResult train_ann_baseline(const Dataset& train, const Dataset& test,
                                         const TrainConfig& cfg) {
  AnnConfig ac;
  ac.m = train.grid.m;
  auto model = std::make_shared<AnnDeepOnet>(ac, cfg.seed);
  AdamW<F>::Config oc;
  oc.weight_decay = F(cfg.weight_decay);
  AdamW<F> opt(model->params().params, oc);
  VarF yv = VarF::constant(grid_queries(train.grid));
  AnnTrainResult res;
  res.record = traindetail::run_loop(
      train, cfg, traindetail::plateau_config(cfg), opt,
      [&](const std::vector<size_t>& idx, size_t start, size_t n) {
        MatF u0 = traindetail::gather_rows(train.u0, idx, start, n);
        MatF tgt = traindetail::gather_rows(train.uT, idx, start, n);
        VarF pred = model->forward(VarF::constant(u0), yv, true);
        return mse(pred, VarF::constant(tgt));
      },
      [&]() { return evaluate_ann(*model, test).mean_rel_l2; });
  model->freeze();
  res.record.final_digest = digest(model->params());
  res.model = model;
  return res;
}

/// Frozen-block outputs for every sample of a dataset, one n x m matrix per
/// participating block. Blocks are deterministic in eval mode, so these are
/// exact stand-ins for re-running the spiking forwards during composition
/// training.
inline std::vector<MatF> precompute_block_outputs(
    std::vector<std::shared_ptr<SpikingDeepOnetBlock>>& blocks, const Dataset& ds,
    size_t batch = 128) {
  MatF y = grid_queries(ds.grid);
  VarF yv = VarF::constant(y);
  std::vector<MatF> outs(blocks.size());
  for (auto& o : outs) o.resize(ds.size(), ds.grid.m);
  for (size_t start = 0; start < ds.size(); start += batch) {
    size_t n = std::min(batch, ds.size() - start);
    MatF u0(n, ds.grid.m);
    for (size_t i = 0; i < n; ++i)
      for (int j = 0; j < ds.grid.m; ++j) u0(i, j) = ds.u0[start + i][j];
    VarF u0v = VarF::constant(u0);
    for (size_t k = 0; k < blocks.size(); ++k)
      outs[k].middleRows(start, n) = blocks[k]->forward(u0v, yv, false).value();
  }
  return outs;
}

struct AggregatorTrainResult {
  std::shared_ptr<Aggregator> aggregator;
  TrainRecord record;
};

/// Trains only the aggregator over a frozen block library. Refuses unfrozen
/// blocks; block digests are untouched by construction (frozen parameters
/// never receive gradients and the optimizer only sees aggregator params).
inline AggregatorTrainResult train_aggregator(const BlockLibrary& lib, FamilyTag family,
                                              const Dataset& train, const Dataset& test,
                                              const TrainConfig& cfg) {
  std::vector<OperatorTag> tags = blocks_for_family(family);
  std::vector<std::shared_ptr<SpikingDeepOnetBlock>> blocks;
  for (OperatorTag t : tags) {
    auto b = lib.share(t);
    if (!b->frozen())
      throw ModelError("train_aggregator: block '" + op_tag_name(t) + "' is not frozen");
    blocks.push_back(b);
  }
  AggregatorConfig ac;
  ac.m = train.grid.m;
  ac.K = int(tags.size());
  auto agg = std::make_shared<Aggregator>(ac, tags, cfg.seed);

  std::vector<MatF> train_outs = precompute_block_outputs(blocks, train);
  AdamW<F>::Config oc;
  oc.weight_decay = F(cfg.weight_decay);
  AdamW<F> opt(agg->params().params, oc);
  ScnoModel eval_model(lib, tags, agg);

  AggregatorTrainResult res;
  res.record = traindetail::run_loop(
      train, cfg, traindetail::cosine_config(cfg), opt,
      [&](const std::vector<size_t>& idx, size_t start, size_t n) {
        MatF u0 = traindetail::gather_rows(train.u0, idx, start, n);
        MatF tgt = traindetail::gather_rows(train.uT, idx, start, n);
        std::vector<VarF> outs;
        for (auto& po : train_outs) {
          MatF o(n, train.grid.m);
          for (size_t i = 0; i < n; ++i) o.row(i) = po.row(idx[start + i]);
          outs.push_back(VarF::constant(std::move(o)));
        }
        VarF pred = agg->forward(outs, VarF::constant(u0));
        return mse(pred, VarF::constant(tgt));
      },
      [&]() { return evaluate_scno(eval_model, test).mean_rel_l2; });
  res.record.final_digest = digest(agg->params());
  res.aggregator = agg;
  return res;
}

struct CorrectionTrainResult {
  std::shared_ptr<CorrectionNet> correction;
  TrainRecord record;
};

/// Trains the correction network and alpha over a frozen library and frozen
/// aggregator. Everything upstream is required to be frozen.
inline CorrectionTrainResult train_correction(const BlockLibrary& lib, FamilyTag family,
                                              std::shared_ptr<Aggregator> agg,
                                              const Dataset& train, const Dataset& test,
                                              const TrainConfig& cfg) {
  std::vector<OperatorTag> tags = blocks_for_family(family);
  std::vector<std::shared_ptr<SpikingDeepOnetBlock>> blocks;
  for (OperatorTag t : tags) {
    auto b = lib.share(t);
    if (!b->frozen())
      throw ModelError("train_correction: block '" + op_tag_name(t) + "' is not frozen");
    blocks.push_back(b);
  }
  if (!agg->frozen())
    throw ModelError("train_correction: aggregator must be frozen");

  CorrectionConfig cc;
  cc.m = train.grid.m;
  auto corr = std::make_shared<CorrectionNet>(cc, cfg.seed);

  // Frozen blocks + frozen aggregator: the aggregator output per sample is a
  // constant, so precompute it once.
  std::vector<MatF> train_outs = precompute_block_outputs(blocks, train);
  MatF u_hat(train.size(), train.grid.m);
  {
    size_t batch = 128;
    for (size_t start = 0; start < train.size(); start += batch) {
      size_t n = std::min(batch, train.size() - start);
      MatF u0(n, train.grid.m);
      for (size_t i = 0; i < n; ++i)
        for (int j = 0; j < train.grid.m; ++j) u0(i, j) = train.u0[start + i][j];
      std::vector<VarF> outs;
      for (auto& po : train_outs)
        outs.push_back(VarF::constant(MatF(po.middleRows(start, n))));
      u_hat.middleRows(start, n) = agg->forward(outs, VarF::constant(u0)).value();
    }
  }

  AdamW<F>::Config oc;
  oc.weight_decay = F(cfg.weight_decay);
  AdamW<F> opt(corr->params().params, oc);
  VarF yv = VarF::constant(grid_queries(train.grid));
  ScnoModel eval_model(lib, tags, agg, corr);

  CorrectionTrainResult res;
  res.record = traindetail::run_loop(
      train, cfg, traindetail::cosine_config(cfg), opt,
      [&](const std::vector<size_t>& idx, size_t start, size_t n) {
        MatF u0 = traindetail::gather_rows(train.u0, idx, start, n);
        MatF tgt = traindetail::gather_rows(train.uT, idx, start, n);
        MatF uh(n, train.grid.m);
        for (size_t i = 0; i < n; ++i) uh.row(i) = u_hat.row(idx[start + i]);
        VarF resid = mul_scalar(corr->forward(VarF::constant(u0), yv), corr->alpha().var);
        VarF pred = add(VarF::constant(std::move(uh)), resid);
        return mse(pred, VarF::constant(tgt));
      },
      [&]() { return evaluate_scno(eval_model, test).mean_rel_l2; });
  res.record.final_digest = digest(corr->params());
  res.correction = corr;
  return res;
}

}  // namespace scno
