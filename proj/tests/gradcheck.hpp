// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference gradient oracle for tests. Independent of the
// tape: it only calls the forward closure.

#pragma once

#include <functional>
#include <vector>

#include "scno/params.hpp"
#include "scno/tensor.hpp"

namespace scno::test {

/// Max relative error between tape gradients and central finite differences
/// over every entry of every given parameter. `forward` must rebuild the
/// computation from the current parameter values and return the scalar loss.
/// Meant for 64-bit mode; step defaults to 1e-4.
inline double gradcheck(std::vector<Var<double>*> params,
                        const std::function<Var<double>()>& forward,
                        double step = 1e-4) {
  for (auto* p : params) p->clear_grad();
  Var<double> loss = forward();
  backward(loss);

  double max_rel = 0.0;
  for (auto* p : params) {
    Mat<double> analytic = p->has_grad()
                               ? p->grad()
                               : Mat<double>::Zero(p->rows(), p->cols());
    for (Eigen::Index i = 0; i < p->rows(); ++i) {
      for (Eigen::Index j = 0; j < p->cols(); ++j) {
        double orig = p->mutable_value()(i, j);
        auto at = [&](double x) {
          p->mutable_value()(i, j) = x;
          return forward().item();
        };
        // five-point stencil, O(step^4) truncation
        double fd = (at(orig - 2 * step) - 8 * at(orig - step) + 8 * at(orig + step) -
                     at(orig + 2 * step)) /
                    (12.0 * step);
        p->mutable_value()(i, j) = orig;
        double denom = std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-6});
        max_rel = std::max(max_rel, std::abs(fd - analytic(i, j)) / denom);
      }
    }
  }
  return max_rel;
}

}  // namespace scno::test
