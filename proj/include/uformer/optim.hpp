// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "uformer/nn.hpp"

namespace uformer {

struct AdamConfig {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// One bias-corrected Adam update over params (in enumeration order).
// Moments are allocated on first use and must keep matching shapes after.
template <typename T>
void adam_step(const ParamList<T>& params, AdamState<T>& state) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw Error("adam_step: missing gradient for parameter '" + p.name + "'");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), T(0));
      state.second_moment.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks a different parameter count");
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const T bc1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> w = params[i].tensor;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != w.numel()) {
      throw DimensionError("adam_step: moment shape mismatch for '" + params[i].name + "'");
    }
    auto data = w.data();
    const auto grad = w.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T g = grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor<T> t = p.tensor;
      for (auto& g : t.grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    if (t.has_grad()) {
      t.zero_grad();
    } else {
      t.node().grad.assign(t.numel(), T(0));
    }
  }
}

}  // namespace uformer
