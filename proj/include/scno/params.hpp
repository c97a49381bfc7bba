// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scno/tensor.hpp"

namespace scno {

/// A named learnable tensor. `trainable` controls whether the optimizer may
/// touch it; freezing clears both this and requires_grad.
template <typename S = float>
struct Param {
  std::string name;
  Var<S> var;
  bool trainable = true;
};

/// Named non-learnable state (batchnorm running statistics).
template <typename S = float>
struct Buffer {
  std::string name;
  Mat<S>* data = nullptr;
};

template <typename S = float>
struct ParamSet {
  std::vector<Param<S>*> params;
  std::vector<Buffer<S>> buffers;

  void add(Param<S>& p) { params.push_back(&p); }
  void add_buffer(const std::string& name, Mat<S>& m) {
    buffers.push_back(Buffer<S>{name, &m});
  }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (auto* p : params) n += p->var.size();
    return n;
  }
  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (auto* p : params)
      if (p->trainable) n += p->var.size();
    return n;
  }
  void freeze() {
    for (auto* p : params) {
      p->trainable = false;
      p->var.set_requires_grad(false);
    }
  }
  void zero_grad() {
    for (auto* p : params) p->var.clear_grad();
  }
};

/// FNV-1a over all parameter and buffer bytes, in registration order.
template <typename S>
std::uint64_t digest(const ParamSet<S>& ps) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto* p : ps.params)
    mix(p->var.value().data(), sizeof(S) * p->var.size());
  for (const auto& b : ps.buffers) mix(b.data->data(), sizeof(S) * b.data->size());
  return h;
}

}  // namespace scno
