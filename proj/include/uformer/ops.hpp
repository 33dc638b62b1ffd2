// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Differentiable tensor operations. Every op computes its forward result
// eagerly and, when recording, registers a closure that accumulates input
// gradients from the output gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "uformer/tensor.hpp"

namespace uformer::ops {

namespace detail {

using uformer::detail::grad_sink;
using uformer::detail::record;
using uformer::detail::shape_str;

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw DimensionError(uformer::detail::concat(op, ": shape mismatch ", shape_str(a), " vs ",
                                                 shape_str(b)));
  }
}

inline std::size_t normalize_axis(const char* op, long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError(uformer::detail::concat(op, ": axis ", axis, " out of range for rank ", rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Splits shape around axis into (outer, extent, inner) products.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// How a second operand broadcasts against the first: equal shape, scalar, or a
// trailing-suffix of the first operand's shape repeated over leading dims.
enum class Broadcast { kSame, kScalar, kSuffix };

inline Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kSame;
  if (shape_numel(b) == 1) return Broadcast::kScalar;
  if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return Broadcast::kSuffix;
  throw DimensionError(uformer::detail::concat(op, ": cannot broadcast ", shape_str(b), " onto ",
                                               shape_str(a)));
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  return record(op, out, {x}, [x, out, deriv](const std::vector<T>& g) {
    T* gx = grad_sink(x);
    if (!gx) return;
    const auto xs = x.data();
    const auto ys = out.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xs[i], ys[i]);
  });
}

// C[m,n] += A[m,k] B[k,n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// D[k,n] += A[m,k]^T G[m,n]
template <typename T>
void gemm_at_acc(const T* a, const T* g, T* d, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* drow = d + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

// D[m,k] += G[m,n] B[k,n]^T, with bt = B^T laid out [n,k].
template <typename T>
void gemm_bt_acc(const T* g, const T* bt, T* d, std::size_t m, std::size_t k, std::size_t n) {
  gemm_acc(g, bt, d, m, n, k);
}

template <typename T>
void transpose_into(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> log1p(const Tensor<T>& x) {
  return detail::unary<T>(
      "log1p", x, [](T v) { return std::log1p(v); }, [](T v, T) { return T(1) / (T(1) + v); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "scale", x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

// Parametric ReLU with one learnable slope per entry of `axis`.
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& alpha, long axis = 0) {
  const std::size_t ax = detail::normalize_axis("prelu", axis, x.dim());
  const auto v = detail::axis_view(x.shape(), ax);
  if (alpha.numel() != v.extent) {
    throw DimensionError(uformer::detail::concat("prelu: ", alpha.numel(), " slopes for axis extent ",
                                                 v.extent));
  }
  Tensor<T> out(x.shape());
  const auto xs = x.data();
  const auto as = alpha.data();
  auto ys = out.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t c = 0; c < v.extent; ++c)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t idx = (o * v.extent + c) * v.inner + i;
        ys[idx] = xs[idx] > T(0) ? xs[idx] : as[c] * xs[idx];
      }
  return detail::record("prelu", out, {x, alpha}, [x, alpha, v](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    T* ga = detail::grad_sink(alpha);
    const auto xs = x.data();
    const auto as = alpha.data();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t c = 0; c < v.extent; ++c)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t idx = (o * v.extent + c) * v.inner + i;
          const bool pos = xs[idx] > T(0);
          if (gx) gx[idx] += g[idx] * (pos ? T(1) : as[c]);
          if (ga && !pos) ga[c] += g[idx] * xs[idx];
        }
  });
}

namespace detail {

template <typename T, bool kMul>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = broadcast_kind(op, a.shape(), b.shape());
  const std::size_t bn = b.numel();
  Tensor<T> out(a.shape());
  const auto as = a.data();
  const auto bs = b.data();
  auto ys = out.data();
  auto bidx = [kind, bn](std::size_t i) {
    return kind == Broadcast::kSame ? i : kind == Broadcast::kScalar ? 0 : i % bn;
  };
  for (std::size_t i = 0; i < ys.size(); ++i) {
    ys[i] = kMul ? as[i] * bs[bidx(i)] : as[i] + bs[bidx(i)];
  }
  return record(op, out, {a, b}, [a, b, bidx](const std::vector<T>& g) {
    T* ga = grad_sink(a);
    T* gb = grad_sink(b);
    const auto as = a.data();
    const auto bs = b.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = bidx(i);
      if constexpr (kMul) {
        if (ga) ga[i] += g[i] * bs[j];
        if (gb) gb[j] += g[i] * as[i];
      } else {
        if (ga) ga[i] += g[i];
        if (gb) gb[j] += g[i];
      }
    }
  });
}

}  // namespace detail

// a + b where b has a's shape, is a scalar, or is a trailing suffix of a's shape.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T, false>("add", a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T, true>("mul", a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  return detail::record("sub", out, {a, b}, [a, b](const std::vector<T>& g) {
    T* ga = detail::grad_sink(a);
    T* gb = detail::grad_sink(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (ga) ga[i] += g[i];
      if (gb) gb[i] -= g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return detail::record("sum", Tensor<T>::scalar(acc), {x}, [x](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + detail::shape_str(x.shape()) + " as " +
                         detail::shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.values());
  return detail::record("reshape", out, {x}, [x](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// out.shape[i] = x.shape[perm[i]]
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.dim();
  if (perm.size() != rank) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank);
  {
    std::size_t s = 1;
    for (std::size_t i = rank; i-- > 0;) {
      in_strides[i] = s;
      s *= x.shape()[i];
    }
  }
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // src offset for every destination index (odometer walk).
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t d = 0; d < n; ++d) {
      src[d] = off;
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        off += src_stride[ax];
        if (idx[ax] < out_shape[ax]) break;
        off -= src_stride[ax] * out_shape[ax];
        idx[ax] = 0;
      }
    }
  }
  Tensor<T> out(out_shape);
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t d = 0; d < n; ++d) ys[d] = xs[src[d]];
  return detail::record("permute", out, {x}, [x, src = std::move(src)](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    for (std::size_t d = 0; d < g.size(); ++d) gx[src[d]] += g[d];
  });
}

// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.dim() < 2) throw DimensionError("transpose: rank < 2");
  std::vector<std::size_t> perm(x.dim());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[x.dim() - 1], perm[x.dim() - 2]);
  return permute(x, perm);
}

// Half-open range [begin, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, long axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = detail::normalize_axis("slice", axis, x.dim());
  const auto v = detail::axis_view(x.shape(), ax);
  if (begin >= end || end > v.extent) {
    throw DimensionError(uformer::detail::concat("slice: range [", begin, ",", end,
                                                 ") invalid for extent ", v.extent));
  }
  Shape shape = x.shape();
  shape[ax] = end - begin;
  Tensor<T> out(shape);
  const std::size_t len = (end - begin) * v.inner;
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(xs.begin() + (o * v.extent + begin) * v.inner, len, ys.begin() + o * len);
  }
  return detail::record("slice", out, {x}, [x, v, begin, len](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < v.outer; ++o) {
      T* dst = gx + (o * v.extent + begin) * v.inner;
      const T* src = g.data() + o * len;
      for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
    }
  });
}

// Index `index` along axis, removing that axis.
template <typename T>
Tensor<T> select(const Tensor<T>& x, long axis, std::size_t index) {
  const std::size_t ax = detail::normalize_axis("select", axis, x.dim());
  Tensor<T> s = slice(x, axis, index, index + 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(ax));
  if (shape.empty()) shape.push_back(1);
  return reshape(s, shape);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = detail::normalize_axis("concat", axis, parts[0].dim());
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) {
      throw DimensionError("concat: incompatible shapes " + detail::shape_str(p.shape()) + " and " +
                           detail::shape_str(parts[0].shape()));
    }
    total += p.shape()[ax];
  }
  shape[ax] = total;
  Tensor<T> out(shape);
  const auto v = detail::axis_view(shape, ax);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[ax] * v.inner;
    const auto ps = p.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(ps.begin() + o * len, len, out.data().begin() + (o * total + off) * v.inner);
    }
    off += p.shape()[ax];
  }
  return detail::record("concat", out, parts,
                        [parts, offsets, v, total, ax](const std::vector<T>& g) {
                          for (std::size_t k = 0; k < parts.size(); ++k) {
                            T* gp = detail::grad_sink(parts[k]);
                            if (!gp) continue;
                            const std::size_t len = parts[k].shape()[ax] * v.inner;
                            for (std::size_t o = 0; o < v.outer; ++o) {
                              const T* src = g.data() + (o * total + offsets[k]) * v.inner;
                              T* dst = gp + o * len;
                              for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  std::vector<Tensor<T>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, 0);
}

// ---------------------------------------------------------------------------
// Matrix product over the last two axes with numpy-style broadcasting of the
// leading (batch) axes.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " +
                         detail::shape_str(a.shape()) + " and " + detail::shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.dim() - 2], k = a.shape()[a.dim() - 1];
  const std::size_t k2 = b.shape()[b.dim() - 2], n = b.shape()[b.dim() - 1];
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ for " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()));
  }
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const std::size_t rank = std::max(abatch.size(), bbatch.size());
  Shape obatch(rank);
  auto extent = [rank](const Shape& s, std::size_t i) {
    const std::size_t pad = rank - s.size();
    return i < pad ? std::size_t{1} : s[i - pad];
  };
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = extent(abatch, i), eb = extent(bbatch, i);
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("matmul: batch dimensions not broadcastable for " +
                           detail::shape_str(a.shape()) + " x " + detail::shape_str(b.shape()));
    }
    obatch[i] = std::max(ea, eb);
  }
  const std::size_t nbatch = shape_numel(obatch);
  // Batch offsets of each operand for every output batch index.
  std::vector<std::size_t> aoff(nbatch), boff(nbatch);
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t ob = 0; ob < nbatch; ++ob) {
      std::size_t ai = 0, bi = 0;
      for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = extent(abatch, i), eb = extent(bbatch, i);
        ai = ai * ea + (ea == 1 ? 0 : idx[i]);
        bi = bi * eb + (eb == 1 ? 0 : idx[i]);
      }
      aoff[ob] = ai * m * k;
      boff[ob] = bi * k * n;
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < obatch[i]) break;
        idx[i] = 0;
      }
    }
  }
  Shape oshape = obatch;
  oshape.push_back(m);
  oshape.push_back(n);
  Tensor<T> out(oshape);
  {
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* cp = out.data().data();
    for (std::size_t ob = 0; ob < nbatch; ++ob) {
      detail::gemm_acc(ap + aoff[ob], bp + boff[ob], cp + ob * m * n, m, k, n);
    }
  }
  return detail::record(
      "matmul", out, {a, b}, [a, b, aoff, boff, m, k, n](const std::vector<T>& g) {
        T* ga = detail::grad_sink(a);
        T* gb = detail::grad_sink(b);
        const T* ap = a.data().data();
        const T* bp = b.data().data();
        std::vector<T> bt;
        if (ga) bt.resize(k * n);
        std::size_t cached_b = static_cast<std::size_t>(-1);
        for (std::size_t ob = 0; ob < aoff.size(); ++ob) {
          const T* gp = g.data() + ob * m * n;
          if (ga) {
            if (boff[ob] != cached_b) {
              detail::transpose_into(bp + boff[ob], bt.data(), k, n);
              cached_b = boff[ob];
            }
            detail::gemm_bt_acc(gp, bt.data(), ga + aoff[ob], m, k, n);
          }
          if (gb) detail::gemm_at_acc(ap + aoff[ob], gp, gb + boff[ob], m, k, n);
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

// Softmax along axis with max-subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis("softmax", axis, x.dim());
  const auto v = detail::axis_view(x.shape(), ax);
  Tensor<T> out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  std::vector<T> row(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < v.extent; ++c) mx = std::max(mx, xs[base + c * v.inner]);
      T total = T(0);
      for (std::size_t c = 0; c < v.extent; ++c) {
        row[c] = std::exp(xs[base + c * v.inner] - mx);
        total += row[c];
      }
      for (std::size_t c = 0; c < v.extent; ++c) ys[base + c * v.inner] = row[c] / total;
    }
  return detail::record("softmax", out, {x}, [x, out, v](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    const auto ys = out.data();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        T dot = T(0);
        for (std::size_t c = 0; c < v.extent; ++c) {
          const std::size_t idx = base + c * v.inner;
          dot += g[idx] * ys[idx];
        }
        for (std::size_t c = 0; c < v.extent; ++c) {
          const std::size_t idx = base + c * v.inner;
          gx[idx] += ys[idx] * (g[idx] - dot);
        }
      }
  });
}

// Normalizes over the last axis, then applies gain and bias of that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError(uformer::detail::concat("layer_norm: gain/bias extent ", gain.numel(), "/",
                                                 bias.numel(), " for normalized axis ", d));
  }
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel()), inv_std(rows);
  const auto xs = x.data();
  const auto gs = gain.data();
  const auto bs = bias.data();
  auto ys = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      ys[r * d + j] = h * gs[j] + bs[j];
    }
  }
  return detail::record(
      "layer_norm", out, {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
       rows](const std::vector<T>& g) {
        T* gx = detail::grad_sink(x);
        T* gg = detail::grad_sink(gain);
        T* gb = detail::grad_sink(bias);
        const auto gs = gain.data();
        std::vector<T> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* grow = g.data() + r * d;
          const T* hrow = xhat.data() + r * d;
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += grow[j] * hrow[j];
            if (gb) gb[j] += grow[j];
            dh[j] = grow[j] * gs[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * hrow[j];
          }
          if (!gx) continue;
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution

// Same-padded 2-D cross-correlation. x: [C_in,H,W], kernels: [C_out,C_in,kh,kw],
// bias (optional, undefined tensor to skip): [C_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias = {}) {
  if (x.dim() != 3 || kernels.dim() != 4) {
    throw DimensionError("conv2d: expected x [C,H,W] and kernels [O,C,kh,kw], got " +
                         detail::shape_str(x.shape()) + " and " + detail::shape_str(kernels.shape()));
  }
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = kernels.shape()[0], kh = kernels.shape()[2], kw = kernels.shape()[3];
  if (kernels.shape()[1] != cin) {
    throw DimensionError("conv2d: kernel input channels " + detail::shape_str(kernels.shape()) +
                         " vs input " + detail::shape_str(x.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError(uformer::detail::concat("conv2d: kernel extents must be odd, got ", kh, "x", kw));
  }
  if (bias.defined() && bias.numel() != cout) throw DimensionError("conv2d: bias extent mismatch");
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor<T> out(Shape{cout, h, w});
  const T* xp = x.data().data();
  const T* kp = kernels.data().data();
  T* yp = out.data().data();
  // Visits (output row, input row, kernel row, column window) in a fixed order.
  auto for_taps = [=](auto&& fn) {
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t vv = 0; vv < kw; ++vv) {
            const std::size_t kidx = ((o * cin + c) * kh + u) * kw + vv;
            const long dv = static_cast<long>(vv) - pw;
            const std::size_t j0 = static_cast<std::size_t>(std::max(0L, -dv));
            const std::size_t j1 = static_cast<std::size_t>(std::min(static_cast<long>(w), static_cast<long>(w) - dv));
            for (std::size_t i = 0; i < h; ++i) {
              const long si = static_cast<long>(i) + static_cast<long>(u) - ph;
              if (si < 0 || si >= static_cast<long>(h)) continue;
              const std::size_t yrow = (o * h + i) * w;
              const std::size_t xrow = (c * h + static_cast<std::size_t>(si)) * w;
              fn(kidx, yrow, xrow, dv, j0, j1);
            }
          }
  };
  for_taps([&](std::size_t kidx, std::size_t yrow, std::size_t xrow, long dv, std::size_t j0,
               std::size_t j1) {
    const T kv = kp[kidx];
    for (std::size_t j = j0; j < j1; ++j) yp[yrow + j] += kv * xp[xrow + j + dv];
  });
  if (bias.defined()) {
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < h * w; ++i) yp[o * h * w + i] += bias[o];
  }
  std::vector<Tensor<T>> inputs{x, kernels};
  if (bias.defined()) inputs.push_back(bias);
  return detail::record("conv2d", out, inputs,
                        [x, kernels, bias, for_taps, cout, h, w](const std::vector<T>& g) {
                          T* gx = detail::grad_sink(x);
                          T* gk = detail::grad_sink(kernels);
                          const T* xp = x.data().data();
                          const T* kp = kernels.data().data();
                          for_taps([&](std::size_t kidx, std::size_t yrow, std::size_t xrow, long dv,
                                       std::size_t j0, std::size_t j1) {
                            if (gx) {
                              const T kv = kp[kidx];
                              for (std::size_t j = j0; j < j1; ++j) gx[xrow + j + dv] += kv * g[yrow + j];
                            }
                            if (gk) {
                              T acc = T(0);
                              for (std::size_t j = j0; j < j1; ++j) acc += g[yrow + j] * xp[xrow + j + dv];
                              gk[kidx] += acc;
                            }
                          });
                          if (bias.defined()) {
                            T* gb = detail::grad_sink(bias);
                            if (gb) {
                              for (std::size_t o = 0; o < cout; ++o)
                                for (std::size_t i = 0; i < h * w; ++i) gb[o] += g[o * h * w + i];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Relative-position indexing

// Maps scores against a relative table onto query/key pairs.
// x: [..., n, 2n-1] where column j stands for offset j-(n-1).
// out[..., p, c] = x[..., p, (c-p)+(n-1)], or x[..., p, (p-c)+(n-1)] when flipped.
template <typename T>
Tensor<T> rel_shift(const Tensor<T>& x, bool flip = false) {
  if (x.dim() < 2) throw DimensionError("rel_shift: rank < 2");
  const std::size_t n = x.shape()[x.dim() - 2];
  if (x.shape().back() != 2 * n - 1) {
    throw DimensionError("rel_shift: expected trailing extent 2n-1 for shape " +
                         detail::shape_str(x.shape()));
  }
  const std::size_t width = 2 * n - 1;
  const std::size_t outer = x.numel() / (n * width);
  Shape shape = x.shape();
  shape.back() = n;
  Tensor<T> out(shape);
  auto col = [n, flip](std::size_t p, std::size_t c) { return flip ? p + n - 1 - c : c + n - 1 - p; };
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < n; ++c) ys[(o * n + p) * n + c] = xs[(o * n + p) * width + col(p, c)];
  return detail::record("rel_shift", out, {x}, [x, n, width, outer, col](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < n; ++c) gx[(o * n + p) * width + col(p, c)] += g[(o * n + p) * n + c];
  });
}

// Adjoint of rel_shift (unflipped): out[..., p, (c-p)+(n-1)] = x[..., p, c], zero elsewhere.
template <typename T>
Tensor<T> rel_unshift(const Tensor<T>& x) {
  if (x.dim() < 2) throw DimensionError("rel_unshift: rank < 2");
  const std::size_t n = x.shape().back();
  if (x.shape()[x.dim() - 2] != n) throw DimensionError("rel_unshift: expected square trailing axes");
  const std::size_t width = 2 * n - 1;
  const std::size_t outer = x.numel() / (n * n);
  Shape shape = x.shape();
  shape.back() = width;
  Tensor<T> out(shape);
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < n; ++c) ys[(o * n + p) * width + c + n - 1 - p] = xs[(o * n + p) * n + c];
  return detail::record("rel_unshift", out, {x}, [x, n, width, outer](const std::vector<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < n; ++c) gx[(o * n + p) * n + c] += g[(o * n + p) * width + c + n - 1 - p];
  });
}

}  // namespace uformer::ops
