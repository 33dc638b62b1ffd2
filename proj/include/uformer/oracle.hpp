// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Reference implementations for self-checks: central finite differences and
// brute-force loop versions of the attention formulas. Nothing here calls
// into the backward pass it is used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "uformer/attention.hpp"
#include "uformer/random.hpp"
#include "uformer/tensor.hpp"

namespace uformer::oracle {

inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients of loss_fn() with central differences.
// `samples` limits how many coordinates are probed overall (0 = all).
// `after_backward` runs between the backward pass and the comparison.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                                  std::vector<Tensor<double>> params, std::size_t samples = 0,
                                  std::uint64_t seed = 1, double h = 1e-5,
                                  const std::function<void()>& after_backward = {}) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = loss_fn();
  }
  tape.backward(loss);
  if (after_backward) after_backward();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].numel(); ++j) coords.emplace_back(i, j);
  if (samples > 0 && samples < coords.size()) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(samples);
  }
  GradCheckResult res;
  for (auto [i, j] : coords) {
    auto& p = params[i];
    const double analytic = p.has_grad() ? p.grad()[j] : 0.0;
    const double saved = p[j];
    p[j] = saved + h;
    const double up = loss_fn().item();
    p[j] = saved - h;
    const double down = loss_fn().item();
    p[j] = saved;
    const double numeric = (up - down) / (2.0 * h);
    res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic, numeric));
    ++res.checked;
  }
  return res;
}

// Plain row-major matrix helpers for the loop oracles.
using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor<double>& t) {
  const std::size_t r = t.shape()[0], c = t.shape()[1];
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t[i * c + j];
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// softmax(Q K^T * scale) V with explicit loops.
inline Mat attention_loops(const Mat& q, const Mat& k, const Mat& v, double scale) {
  const std::size_t len = q.size();
  Mat out(len, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t p = 0; p < len; ++p) {
    std::vector<double> w(len);
    double mx = -1e300;
    for (std::size_t c = 0; c < len; ++c) {
      double s = 0.0;
      for (std::size_t d = 0; d < q[0].size(); ++d) s += q[p][d] * k[c][d];
      w[c] = s * scale;
      mx = std::max(mx, w[c]);
    }
    double z = 0.0;
    for (auto& x : w) z += (x = std::exp(x - mx));
    for (std::size_t c = 0; c < len; ++c)
      for (std::size_t d = 0; d < v[0].size(); ++d) out[p][d] += w[c] / z * v[c][d];
  }
  return out;
}

// Position-sensitive multi-head attention on one sequence x [n, d], written
// directly from the per-head formula.
inline Mat position_attention_loops(const Mat& x, const AxialAttention<double>& att) {
  const std::size_t n = x.size(), d = x[0].size();
  const std::size_t heads = att.config.heads, dk = d / heads;
  const Mat q = matmul(x, to_mat(att.w_query));
  const Mat k = matmul(x, to_mat(att.w_key));
  const Mat v = matmul(x, to_mat(att.w_value));
  const auto& rq = att.query_table();
  const auto& rk = att.key_table();
  const auto& rv = att.value_table();
  const std::size_t width = 2 * n - 1;
  auto table = [&](const Tensor<double>& t, std::size_t h, long offset, std::size_t j) {
    return t[(h * width + static_cast<std::size_t>(offset + static_cast<long>(n) - 1)) * dk + j];
  };
  const double scale = 1.0 / std::sqrt(static_cast<double>(
      att.config.scale == ScoreScale::kSequenceLength ? n : dk));
  Mat concat(n, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t p = 0; p < n; ++p) {
      std::vector<double> logit(n);
      double mx = -1e300;
      for (std::size_t c = 0; c < n; ++c) {
        const long off = static_cast<long>(c) - static_cast<long>(p);
        double s = 0.0;
        for (std::size_t j = 0; j < dk; ++j) {
          const double qj = q[p][h * dk + j], kj = k[c][h * dk + j];
          s += qj * kj + qj * table(rq, h, off, j) + kj * table(rk, h, off, j);
        }
        logit[c] = s * scale;
        if (att.config.span > 0 && static_cast<std::size_t>(std::abs(off)) >= att.config.span) logit[c] = -1e300;
        mx = std::max(mx, logit[c]);
      }
      double z = 0.0;
      for (auto& l : logit) z += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < n; ++c) {
        const long off = static_cast<long>(c) - static_cast<long>(p);
        for (std::size_t j = 0; j < dk; ++j) {
          concat[p][h * dk + j] += logit[c] / z * (v[c][h * dk + j] + table(rv, h, off, j));
        }
      }
    }
  }
  return matmul(concat, to_mat(att.w_out));
}

// Time attention on [T, F, d] by looping the sequence oracle over frequency rows.
inline Tensor<double> time_attention_loops(const Tensor<double>& x, const AxialAttention<double>& att) {
  const std::size_t t = x.shape()[0], f = x.shape()[1], d = x.shape()[2];
  Tensor<double> out({t, f, d});
  for (std::size_t fi = 0; fi < f; ++fi) {
    Mat seq(t, std::vector<double>(d));
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t j = 0; j < d; ++j) seq[ti][j] = x[(ti * f + fi) * d + j];
    const Mat r = position_attention_loops(seq, att);
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t j = 0; j < d; ++j) out[(ti * f + fi) * d + j] = r[ti][j];
  }
  return out;
}

// Frequency attention on [T, F, d] (optionally a bin range) looping over frames.
inline Tensor<double> freq_attention_loops(const Tensor<double>& x, const AxialAttention<double>& att,
                                           std::size_t f0 = 0, std::size_t f1 = 0) {
  const std::size_t t = x.shape()[0], f = x.shape()[1], d = x.shape()[2];
  if (f1 == 0) f1 = f;
  Tensor<double> out({t, f1 - f0, d});
  for (std::size_t ti = 0; ti < t; ++ti) {
    Mat seq(f1 - f0, std::vector<double>(d));
    for (std::size_t fi = f0; fi < f1; ++fi)
      for (std::size_t j = 0; j < d; ++j) seq[fi - f0][j] = x[(ti * f + fi) * d + j];
    const Mat r = position_attention_loops(seq, att);
    for (std::size_t fi = 0; fi < f1 - f0; ++fi)
      for (std::size_t j = 0; j < d; ++j) out[(ti * (f1 - f0) + fi) * d + j] = r[fi][j];
  }
  return out;
}

// Layer normalization over the last axis with unit gain and zero bias.
inline Tensor<double> layer_norm_loops(const Tensor<double>& x, double eps = 1e-5) {
  const std::size_t d = x.shape().back();
  Tensor<double> out(x.shape());
  for (std::size_t r = 0; r < x.numel() / d; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (x[r * d + j] - mu) / std::sqrt(var + eps);
  }
  return out;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Mat& a, const Tensor<double>& b) {
  double m = 0.0;
  const std::size_t c = a[0].size();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, std::abs(a[i][j] - b[i * c + j]));
  return m;
}

// Fills every parameter of an attention with random values, tables included.
inline void randomize(AxialAttention<double>& att, Rng& rng, double scale = 0.5) {
  att.visit("", [&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  });
}

}  // namespace uformer::oracle
