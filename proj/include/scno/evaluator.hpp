// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scno/composition.hpp"
#include "scno/dataset.hpp"
#include "scno/models.hpp"

namespace scno {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// ||pred - truth||_2 / ||truth||_2 for one sample.
inline double relative_l2(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  double tn = truth.norm();
  if (tn == 0.0) throw EvalError("relative_l2: truth has zero norm");
  return (pred - truth).norm() / tn;
}

/// Energy model: 0.9 pJ per spike. A lower bound; the non-spiking correction
/// network is excluded.
inline double energy_estimate(std::uint64_t spikes) { return double(spikes) * 0.9e-12; }

inline MatF dataset_matrix(const std::vector<std::vector<float>>& rows) {
  MatF m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

/// Query coordinates for all grid points, normalized to [0, 1).
inline MatF grid_queries(const GridSpec& grid) {
  MatF y(grid.m, 1);
  for (int i = 0; i < grid.m; ++i) y(i, 0) = float(grid.h() * i / grid.length);
  return y;
}

struct EvalResult {
  double mean_rel_l2 = 0.0;
  std::uint64_t total_spikes = 0;
  size_t samples = 0;
  double spikes_per_inference() const {
    return samples == 0 ? 0.0 : double(total_spikes) / double(samples);
  }
  double energy_per_inference() const {
    return samples == 0 ? 0.0 : energy_estimate(total_spikes) / double(samples);
  }
};

/// Evaluates a batched predictor fn(u0 batch, y) -> batch x m over a dataset.
inline EvalResult evaluate_predictor(
    const std::function<MatF(const MatF&, const MatF&, SpikeStats*)>& predict,
    const Dataset& ds, size_t batch_size = 100) {
  EvalResult r;
  MatF y = grid_queries(ds.grid);
  double sum = 0.0;
  SpikeStats stats;
  for (size_t start = 0; start < ds.size(); start += batch_size) {
    size_t n = std::min(batch_size, ds.size() - start);
    MatF u0(n, ds.grid.m);
    for (size_t i = 0; i < n; ++i)
      for (int j = 0; j < ds.grid.m; ++j) u0(i, j) = ds.u0[start + i][j];
    MatF pred = predict(u0, y, &stats);
    for (size_t i = 0; i < n; ++i) {
      Eigen::VectorXd p = pred.row(i).transpose().cast<double>();
      Eigen::VectorXd t(ds.grid.m);
      for (int j = 0; j < ds.grid.m; ++j) t[j] = ds.uT[start + i][j];
      sum += relative_l2(p, t);
    }
  }
  r.samples = ds.size();
  r.mean_rel_l2 = sum / double(ds.size());
  r.total_spikes = stats.total;
  return r;
}

inline EvalResult evaluate_block(SpikingDeepOnetBlock& block, const Dataset& ds) {
  return evaluate_predictor(
      [&block](const MatF& u0, const MatF& y, SpikeStats* st) {
        st->samples_seen += std::uint64_t(u0.rows());
        return block
            .forward(VarF::constant(u0), VarF::constant(y), false, st)
            .value();
      },
      ds);
}

inline EvalResult evaluate_ann(AnnDeepOnet& model, const Dataset& ds) {
  return evaluate_predictor(
      [&model](const MatF& u0, const MatF& y, SpikeStats*) {
        return model.forward(VarF::constant(u0), VarF::constant(y), false).value();
      },
      ds);
}

inline EvalResult evaluate_scno(ScnoModel& model, const Dataset& ds) {
  return evaluate_predictor(
      [&model](const MatF& u0, const MatF& y, SpikeStats* st) {
        st->samples_seen += std::uint64_t(u0.rows());
        return model.forward(VarF::constant(u0), VarF::constant(y), st).value();
      },
      ds);
}

/// Ratio of mean spikes per inference, SCNO composition over monolithic SNN.
inline double spike_ratio(ScnoModel& scno, SpikingDeepOnetBlock& mono,
                          const Dataset& test) {
  EvalResult a = evaluate_scno(scno, test);
  EvalResult b = evaluate_block(mono, test);
  if (b.total_spikes == 0)
    throw EvalError("spike_ratio: monolithic model produced zero spikes");
  return a.spikes_per_inference() / b.spikes_per_inference();
}

// ---------------------------------------------------------------------------
// Continual-learning experiment: blocks are added one phase at a time and all
// present blocks are re-evaluated after each phase. Frozen blocks must give
// bitwise-identical errors across phases.
// ---------------------------------------------------------------------------

struct ContinualRow {
  int phase = 0;
  OperatorTag tag = OperatorTag::Convection;
  double rel_l2 = 0.0;
};

struct ContinualReport {
  std::vector<ContinualRow> rows;
  bool zero_forgetting = true;
  std::string violation;  // set when a cross-phase difference is found
};

inline ContinualReport continual_experiment(
    const std::vector<std::pair<OperatorTag, std::shared_ptr<SpikingDeepOnetBlock>>>&
        phased_blocks,
    const std::map<OperatorTag, Dataset>& test_sets) {
  ContinualReport report;
  BlockLibrary lib;
  std::map<OperatorTag, std::uint64_t> first_bits;
  int phase = 0;
  for (const auto& [tag, block] : phased_blocks) {
    ++phase;
    lib.add_block(tag, block);
    for (OperatorTag present : lib.tags()) {
      EvalResult r = evaluate_block(lib.at(present), test_sets.at(present));
      report.rows.push_back({phase, present, r.mean_rel_l2});
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(double));
      std::memcpy(&bits, &r.mean_rel_l2, sizeof(bits));
      auto it = first_bits.find(present);
      if (it == first_bits.end()) {
        first_bits[present] = bits;
      } else if (it->second != bits) {
        report.zero_forgetting = false;
        report.violation = "block '" + op_tag_name(present) + "' error changed at phase " +
                           std::to_string(phase) + " (bit pattern " +
                           std::to_string(it->second) + " -> " + std::to_string(bits) + ")";
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Table 2 style report
// ---------------------------------------------------------------------------

struct CellStats {
  std::vector<double> values;  // per seed, as percent
  double mean() const {
    double s = 0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / double(values.size());
  }
  /// Population std over seeds.
  double stddev() const {
    if (values.empty()) return 0.0;
    double mu = mean(), s = 0;
    for (double v : values) s += (v - mu) * (v - mu);
    return std::sqrt(s / double(values.size()));
  }
};

struct Table2Report {
  // results[family][method] -> per-seed relative L2 (percent)
  std::map<std::string, std::map<std::string, CellStats>> results;
  std::map<std::string, std::int64_t> trainable_params;

  static const std::vector<std::string>& families() {
    static const std::vector<std::string> f = {"conv_diff", "react_diff", "neutron_diff",
                                               "burgers", "adv_react"};
    return f;
  }
  static const std::vector<std::string>& methods() {
    static const std::vector<std::string> m = {"scno", "scno_corr", "mono_snn", "ann"};
    return m;
  }

  bool complete() const {
    for (const auto& f : families())
      for (const auto& m : methods()) {
        auto fit = results.find(f);
        if (fit == results.end()) return false;
        auto mit = fit->second.find(m);
        if (mit == fit->second.end() || mit->second.values.empty()) return false;
      }
    return true;
  }

  /// CSV with one row per family, mean+-std cells to one decimal, trainable
  /// parameter footer; missing cells get an explicit gap marker.
  std::string to_csv() const {
    char buf[64];
    std::string out = "pde,scno,scno_corr,mono_snn,ann\n";
    for (const auto& f : families()) {
      out += f;
      for (const auto& m : methods()) {
        out += ",";
        auto fit = results.find(f);
        const CellStats* cell = nullptr;
        if (fit != results.end()) {
          auto mit = fit->second.find(m);
          if (mit != fit->second.end() && !mit->second.values.empty())
            cell = &mit->second;
        }
        if (!cell) {
          out += "MISSING";
        } else {
          std::snprintf(buf, sizeof(buf), "%.1f+-%.1f", cell->mean(), cell->stddev());
          out += buf;
        }
      }
      out += "\n";
    }
    out += "trainable_params";
    for (const auto& m : methods()) {
      out += ",";
      auto it = trainable_params.find(m);
      out += it == trainable_params.end() ? "MISSING" : std::to_string(it->second);
    }
    out += "\n";
    return out;
  }
};

}  // namespace scno
