// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uformer/ops.hpp"
#include "uformer/random.hpp"

namespace uformer {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

template <typename T>
Tensor<T> make_param(Shape shape, T fill = T(0)) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

// Normalized (Glorot) uniform initialization: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
}

namespace nn {

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out)
      : weight(make_param<T>({in, out})), bias(make_param<T>({out})) {}

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  void init(Rng& rng) { glorot_uniform(weight, in_features(), out_features(), rng); }

  // x: [..., in] -> [..., out]
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::add(ops::matmul(x, weight), bias); }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".weight", weight);
    v(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;
  T eps = T(1e-5);

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gain(make_param<T>({d}, T(1))), bias(make_param<T>({d})) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::layer_norm(x, gain, bias, eps); }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".gain", gain);
    v(prefix + ".bias", bias);
  }
};

template <typename T>
struct Conv2d {
  Tensor<T> kernels;  // [out, in, kh, kw]
  Tensor<T> bias;     // [out]

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw)
      : kernels(make_param<T>({out, in, kh, kw})), bias(make_param<T>({out})) {}

  void init(Rng& rng) {
    const auto& s = kernels.shape();
    glorot_uniform(kernels, s[1] * s[2] * s[3], s[0] * s[2] * s[3], rng);
  }

  // x: [in, H, W] -> [out, H, W]
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, kernels, bias); }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".kernels", kernels);
    v(prefix + ".bias", bias);
  }
};

// Gated recurrent unit. Gate blocks are packed [reset | update | candidate]
// along the last axis of the weights:
//   r = sigmoid(x W_xr + b_xr + h W_hr + b_hr)
//   z = sigmoid(x W_xz + b_xz + h W_hz + b_hz)
//   n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))
//   h' = (1 - z) * n + z * h
template <typename T>
struct Gru {
  Tensor<T> w_input;   // [in, 3h]
  Tensor<T> w_hidden;  // [h, 3h]
  Tensor<T> b_input;   // [3h]
  Tensor<T> b_hidden;  // [3h]

  Gru() = default;
  Gru(std::size_t in, std::size_t hidden)
      : w_input(make_param<T>({in, 3 * hidden})),
        w_hidden(make_param<T>({hidden, 3 * hidden})),
        b_input(make_param<T>({3 * hidden})),
        b_hidden(make_param<T>({3 * hidden})) {}

  std::size_t input_size() const { return w_input.shape()[0]; }
  std::size_t hidden_size() const { return w_hidden.shape()[0]; }

  void init(Rng& rng) {
    // Each gate block is its own [in, h] / [h, h] matrix for fan purposes.
    const std::size_t in = input_size(), h = hidden_size();
    glorot_uniform(w_input, in, h, rng);
    glorot_uniform(w_hidden, h, h, rng);
  }

  // One step from precomputed input projection gx = x W_x + b_x ([..., 3h]).
  Tensor<T> step(const Tensor<T>& gx, const Tensor<T>& h_prev) const {
    const std::size_t h = hidden_size();
    const Tensor<T> gh = ops::add(ops::matmul(h_prev, w_hidden), b_hidden);
    const Tensor<T> r = ops::sigmoid(ops::add(ops::slice(gx, -1, 0, h), ops::slice(gh, -1, 0, h)));
    const Tensor<T> z = ops::sigmoid(ops::add(ops::slice(gx, -1, h, 2 * h), ops::slice(gh, -1, h, 2 * h)));
    const Tensor<T> n = ops::tanh(
        ops::add(ops::slice(gx, -1, 2 * h, 3 * h), ops::mul(r, ops::slice(gh, -1, 2 * h, 3 * h))));
    // (1 - z) n + z h = n + z (h - n)
    return ops::add(n, ops::mul(z, ops::sub(h_prev, n)));
  }

  // x_t: [..., in], h_prev: [..., h] (2-D: [batch, features]) -> [..., h]
  Tensor<T> cell(const Tensor<T>& x_t, const Tensor<T>& h_prev) const {
    const bool vec = x_t.dim() == 1;
    const Tensor<T> x2 = vec ? ops::reshape(x_t, {1, x_t.numel()}) : x_t;
    const Tensor<T> h2 = vec ? ops::reshape(h_prev, {1, h_prev.numel()}) : h_prev;
    const Tensor<T> out = step(ops::add(ops::matmul(x2, w_input), b_input), h2);
    return vec ? ops::reshape(out, {hidden_size()}) : out;
  }

  // Scans the leading axis. x: [steps, batch, in] -> [steps, batch, h], h0 = 0.
  Tensor<T> sequence(const Tensor<T>& x) const {
    if (x.dim() != 3 || x.shape()[2] != input_size()) {
      throw DimensionError("gru: expected [steps, batch, " + std::to_string(input_size()) + "], got " +
                           detail::shape_str(x.shape()));
    }
    const std::size_t steps = x.shape()[0], batch = x.shape()[1];
    const Tensor<T> gx = ops::add(ops::matmul(x, w_input), b_input);
    Tensor<T> h = Tensor<T>::zeros({batch, hidden_size()});
    std::vector<Tensor<T>> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      h = step(ops::select(gx, 0, t), h);
      outputs.push_back(h);
    }
    return ops::stack(outputs);
  }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".w_input", w_input);
    v(prefix + ".w_hidden", w_hidden);
    v(prefix + ".b_input", b_input);
    v(prefix + ".b_hidden", b_hidden);
  }
};

}  // namespace nn
}  // namespace uformer
