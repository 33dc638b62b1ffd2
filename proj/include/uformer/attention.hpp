// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Position-sensitive axial attention over spectrogram feature maps.
//
// Per head, with projected queries q, keys k, values v along one axis of
// length n and learnable relative tables indexed by the offset c - p:
//
//   logit(p, c) = s * (q_p . k_c + q_p . rq_{c-p} + k_c . rk_{c-p})
//   out_p       = sum_c softmax_c(logit(p, c)) * (v_c + rv_{c-p})
//
// with s = 1/sqrt(n) (default) or 1/sqrt(d_k). Heads are concatenated and
// mixed by an output projection. The high-band variant uses one table for
// all three roles.
//
// Feature maps are [T, F, d]. Time attention runs along T for every
// frequency row; frequency attention runs along F for every frame. Each
// shares one parameter set across the rows it batches over.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <variant>

#include "uformer/nn.hpp"

namespace uformer {

enum class Axis { kTime, kFrequency };
enum class Band { kFull, kLow, kHigh };
enum class ScoreScale { kSequenceLength, kHeadDim };
enum class TableKind { kPerRole, kShared };

struct AttentionConfig {
  std::size_t heads = 8;
  std::size_t d_layer = 64;
  // Sequence length n along the attended axis.
  std::size_t length = 1;
  Axis axis = Axis::kTime;
  Band band = Band::kFull;
  TableKind table = TableKind::kPerRole;
  // Half-width of the local window |c - p| < span; 0 attends over the full axis.
  std::size_t span = 0;
  ScoreScale scale = ScoreScale::kSequenceLength;

  std::size_t d_k() const { return d_layer / heads; }
  std::size_t d_v() const { return d_layer / heads; }

  void validate() const {
    if (heads == 0 || d_layer == 0 || length == 0) {
      throw ConfigError("attention: heads, d_layer and length must be positive");
    }
    if (d_layer % heads != 0) {
      throw ConfigError(detail::concat("attention: d_layer ", d_layer, " not divisible by ", heads,
                                       " heads"));
    }
  }
};

// Largest head count <= requested that divides d.
inline std::size_t fit_heads(std::size_t requested, std::size_t d) {
  for (std::size_t h = std::min(requested, d); h > 1; --h) {
    if (d % h == 0) return h;
  }
  return 1;
}

// Independent query/key/value tables, each [heads, 2n-1, d_k].
template <typename T>
struct RelPosTable {
  Tensor<T> query, key, value;

  RelPosTable() = default;
  RelPosTable(std::size_t heads, std::size_t n, std::size_t dk)
      : query(make_param<T>({heads, 2 * n - 1, dk})),
        key(make_param<T>({heads, 2 * n - 1, dk})),
        value(make_param<T>({heads, 2 * n - 1, dk})) {}

  std::size_t extent() const { return query.shape()[1]; }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".rel_query", query);
    v(prefix + ".rel_key", key);
    v(prefix + ".rel_value", value);
  }
};

// One table shared by all roles, [heads, 2n-1, d_k].
template <typename T>
struct SharedPosTable {
  Tensor<T> shared;

  SharedPosTable() = default;
  SharedPosTable(std::size_t heads, std::size_t n, std::size_t dk)
      : shared(make_param<T>({heads, 2 * n - 1, dk})) {}

  std::size_t extent() const { return shared.shape()[1]; }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".rel_shared", shared);
  }
};

template <typename T>
struct AxialAttention {
  AttentionConfig config;
  Tensor<T> w_query, w_key, w_value, w_out;  // [d, d]
  std::variant<RelPosTable<T>, SharedPosTable<T>> table;

  AxialAttention() = default;
  explicit AxialAttention(const AttentionConfig& cfg) : config(cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_layer;
    w_query = make_param<T>({d, d});
    w_key = make_param<T>({d, d});
    w_value = make_param<T>({d, d});
    w_out = make_param<T>({d, d});
    if (cfg.table == TableKind::kShared) {
      table = SharedPosTable<T>(cfg.heads, cfg.length, cfg.d_k());
    } else {
      table = RelPosTable<T>(cfg.heads, cfg.length, cfg.d_k());
    }
  }

  const Tensor<T>& query_table() const {
    return std::visit([](const auto& t) -> const Tensor<T>& {
      if constexpr (std::is_same_v<std::decay_t<decltype(t)>, RelPosTable<T>>) return t.query;
      else return t.shared;
    }, table);
  }
  const Tensor<T>& key_table() const {
    return std::visit([](const auto& t) -> const Tensor<T>& {
      if constexpr (std::is_same_v<std::decay_t<decltype(t)>, RelPosTable<T>>) return t.key;
      else return t.shared;
    }, table);
  }
  const Tensor<T>& value_table() const {
    return std::visit([](const auto& t) -> const Tensor<T>& {
      if constexpr (std::is_same_v<std::decay_t<decltype(t)>, RelPosTable<T>>) return t.value;
      else return t.shared;
    }, table);
  }

  void init(Rng& rng) {
    const std::size_t d = config.d_layer;
    glorot_uniform(w_query, d, d, rng);
    glorot_uniform(w_key, d, d, rng);
    glorot_uniform(w_value, d, d, rng);
    glorot_uniform(w_out, d, d, rng);
  }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    v(prefix + ".w_query", w_query);
    v(prefix + ".w_key", w_key);
    v(prefix + ".w_value", w_value);
    v(prefix + ".w_out", w_out);
    std::visit([&](auto& t) { t.visit(prefix, v); }, table);
  }
};

namespace detail {

template <typename T>
T score_scale(ScoreScale s, std::size_t length, std::size_t dk) {
  return T(1) / std::sqrt(static_cast<T>(s == ScoreScale::kSequenceLength ? length : dk));
}

// [B, n, d] -> [B, h, n, d/h]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
  return ops::permute(ops::reshape(x, {b, n, heads, d / heads}), {0, 2, 1, 3});
}

// [B, h, n, dv] -> [B, n, h*dv]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const std::size_t b = x.shape()[0], h = x.shape()[1], n = x.shape()[2], dv = x.shape()[3];
  return ops::reshape(ops::permute(x, {0, 2, 1, 3}), {b, n, h * dv});
}

template <typename T>
Tensor<T> span_mask(std::size_t n, std::size_t span) {
  Tensor<T> m({n, n});
  const T blocked = -std::numeric_limits<T>::max() / T(4);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t off = p > c ? p - c : c - p;
      if (off >= span) m.at({p, c}) = blocked;
    }
  return m;
}

}  // namespace detail

// Softmax(Q K^T * s) V for Q, K: [L, d_k], V: [L, d_v]; s = 1/sqrt(L) by default.
template <typename T>
Tensor<T> scaled_dot_product(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             ScoreScale scale = ScoreScale::kSequenceLength) {
  if (q.dim() < 2 || k.dim() < 2 || v.dim() < 2) {
    throw DimensionError("scaled_dot_product: operands must have rank >= 2");
  }
  const std::size_t len = q.shape()[q.dim() - 2];
  if (len == 0) throw DimensionError("scaled_dot_product: empty sequence");
  if (k.shape()[k.dim() - 2] != len || v.shape()[v.dim() - 2] != len) {
    throw DimensionError("scaled_dot_product: row counts differ: Q " + detail::shape_str(q.shape()) +
                         ", K " + detail::shape_str(k.shape()) + ", V " + detail::shape_str(v.shape()));
  }
  const T s = detail::score_scale<T>(scale, len, q.shape().back());
  const Tensor<T> weights = ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), s), -1);
  return ops::matmul(weights, v);
}

// Attention weights [B, h, n, n] for x: [B, n, d]; exposed for inspection.
template <typename T>
Tensor<T> axial_attention_weights(const Tensor<T>& x, const AxialAttention<T>& att,
                                  Tensor<T>* values_out = nullptr) {
  const auto& cfg = att.config;
  if (x.dim() != 3 || x.shape()[2] != cfg.d_layer) {
    throw DimensionError(detail::concat("axial_attention: expected [B, n, ", cfg.d_layer, "], got ",
                                        detail::shape_str(x.shape())));
  }
  const std::size_t n = x.shape()[1];
  const std::size_t extent = std::visit([](const auto& t) { return t.extent(); }, att.table);
  if (extent != 2 * n - 1 || n != cfg.length) {
    throw DimensionError(detail::concat("axial_attention: positional table extent ", extent,
                                        " does not match axis length ", n));
  }
  const std::size_t h = cfg.heads;
  const Tensor<T> q = detail::split_heads(ops::matmul(x, att.w_query), h);
  const Tensor<T> k = detail::split_heads(ops::matmul(x, att.w_key), h);
  if (values_out) *values_out = detail::split_heads(ops::matmul(x, att.w_value), h);

  const Tensor<T> content = ops::matmul(q, ops::transpose(k));
  // q_p . rq_{c-p}
  const Tensor<T> query_pos = ops::rel_shift(ops::matmul(q, ops::transpose(att.query_table())));
  // k_c . rk_{c-p}: rows indexed by key, flipped offsets, then transposed to [p, c].
  const Tensor<T> key_pos =
      ops::transpose(ops::rel_shift(ops::matmul(k, ops::transpose(att.key_table())), true));
  Tensor<T> logits = ops::add(ops::add(content, query_pos), key_pos);
  logits = ops::scale(logits, detail::score_scale<T>(cfg.scale, n, cfg.d_k()));
  if (cfg.span > 0 && cfg.span < n) logits = ops::add(logits, detail::span_mask<T>(n, cfg.span));
  return ops::softmax(logits, -1);
}

namespace detail {

// [n, d] row block of head hd, transposed to dst[j * n + c].
template <typename T>
void gather_head(const T* src, T* dst, std::size_t n, std::size_t d, std::size_t off, std::size_t dk) {
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t j = 0; j < dk; ++j) dst[j * n + c] = src[c * d + off + j];
}

template <typename T>
void scatter_head(const T* src, T* dst, std::size_t n, std::size_t d, std::size_t off, std::size_t dk) {
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t j = 0; j < dk; ++j) dst[c * d + off + j] += src[j * n + c];
}

// sum_c a[c] * (b[c] + e[c]) with fixed-width partial sums so the loop vectorizes.
template <typename T>
T dot_sum(const T* a, const T* b, const T* e, std::size_t len) {
  constexpr std::size_t kLanes = 8;
  T part[kLanes] = {};
  std::size_t c = 0;
  for (; c + kLanes <= len; c += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) part[l] += a[c + l] * (b[c + l] + e[c + l]);
  T acc = T(0);
  for (; c < len; ++c) acc += a[c] * (b[c] + e[c]);
  for (std::size_t l = 0; l < kLanes; ++l) acc += part[l];
  return acc;
}

}  // namespace detail

// Fused position-sensitive attention core. q, k, v: [B, n, h*d_k] with heads
// interleaved along the last axis; rq, rk, rv: [h, 2n-1, d_k]. Returns the
// per-head outputs sum_c w(p, c) (v_c + rv_{c-p}) merged to [B, n, h*d_k].
// Keys with |c - p| >= span get zero weight when 0 < span < n.
//
// Internally keys, values and tables are transposed to [d_k, .] so that for a
// fixed query p the table row c + n - 1 - p runs contiguously with c.
template <typename T>
Tensor<T> relative_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& rq,
                             const Tensor<T>& rk, const Tensor<T>& rv, std::size_t heads, T scale,
                             std::size_t span = 0) {
  if (q.dim() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("relative_attention: q, k, v must share one [B, n, d] shape, got " +
                         detail::shape_str(q.shape()) + ", " + detail::shape_str(k.shape()) + ", " +
                         detail::shape_str(v.shape()));
  }
  const std::size_t nb = q.shape()[0], n = q.shape()[1], d = q.shape()[2];
  if (heads == 0 || d % heads != 0) {
    throw DimensionError(detail::concat("relative_attention: width ", d, " not divisible by ", heads, " heads"));
  }
  const std::size_t dk = d / heads, m = 2 * n - 1;
  const Shape table{heads, m, dk};
  for (const Tensor<T>* r : {&rq, &rk, &rv}) {
    if (r->shape() != table) {
      throw DimensionError("relative_attention: table " + detail::shape_str(r->shape()) + " should be " +
                           detail::shape_str(table));
    }
  }
  const std::size_t width = span > 0 && span < n ? span : n;
  auto lo = [width](std::size_t p) { return p + 1 > width ? p + 1 - width : std::size_t{0}; };
  auto hi = [n, width](std::size_t p) { return std::min(n, p + width); };

  // Tables as [h, d_k, 2n-1].
  auto transpose_table = [heads, m, dk](const Tensor<T>& r) {
    std::vector<T> t(heads * dk * m);
    const T* rp = r.data().data();
    for (std::size_t hd = 0; hd < heads; ++hd) detail::gather_head(rp + hd * m * dk, t.data() + hd * dk * m, m, dk, 0, dk);
    return t;
  };
  const std::vector<T> rqt = transpose_table(rq), rkt = transpose_table(rk), rvt = transpose_table(rv);

  // Softmax weights, [B, h, n, n]; reused by the backward pass.
  auto weights = std::make_shared<std::vector<T>>(nb * heads * n * n, T(0));
  Tensor<T> out({nb, n, d});
  {
    const T *qp = q.data().data(), *kp = k.data().data(), *vp = v.data().data();
    T* op = out.data().data();
    std::vector<T> kt(dk * n), vt(dk * n);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t hd = 0; hd < heads; ++hd) {
        detail::gather_head(kp + b * n * d, kt.data(), n, d, hd * dk, dk);
        detail::gather_head(vp + b * n * d, vt.data(), n, d, hd * dk, dk);
        const T* tq = rqt.data() + hd * dk * m;
        const T* tk = rkt.data() + hd * dk * m;
        const T* tv = rvt.data() + hd * dk * m;
        for (std::size_t p = 0; p < n; ++p) {
          const T* qrow = qp + (b * n + p) * d + hd * dk;
          T* w = weights->data() + ((b * heads + hd) * n + p) * n;
          const std::size_t c0 = lo(p), len = hi(p) - c0, r0 = c0 + n - 1 - p;
          T* lg = w + c0;
          for (std::size_t j = 0; j < dk; ++j) {
            const T qj = qrow[j];
            const T* kr = kt.data() + j * n + c0;
            const T* qr = tq + j * m + r0;
            const T* krr = tk + j * m + r0;
            for (std::size_t c = 0; c < len; ++c) lg[c] += qj * (kr[c] + qr[c]) + kr[c] * krr[c];
          }
          T top = -std::numeric_limits<T>::infinity();
          for (std::size_t c = 0; c < len; ++c) top = std::max(top, lg[c] *= scale);
          T total = T(0);
          for (std::size_t c = 0; c < len; ++c) total += (lg[c] = std::exp(lg[c] - top));
          const T inv = T(1) / total;
          for (std::size_t c = 0; c < len; ++c) lg[c] *= inv;
          T* orow = op + (b * n + p) * d + hd * dk;
          for (std::size_t j = 0; j < dk; ++j) {
            orow[j] = detail::dot_sum(lg, vt.data() + j * n + c0, tv + j * m + r0, len);
          }
        }
      }
  }
  return detail::record(
      "relative_attention", out, {q, k, v, rq, rk, rv},
      [q, k, v, rq, rk, rv, rqt, rkt, rvt, weights, nb, n, d, dk, m, heads, scale, lo,
       hi](const std::vector<T>& g) {
        const T *qp = q.data().data(), *kp = k.data().data(), *vp = v.data().data();
        std::vector<T> kt(dk * n), vt(dk * n), gkt(dk * n), gvt(dk * n), dw(n);
        std::vector<T> gtq(heads * dk * m, T(0)), gtk(heads * dk * m, T(0)), gtv(heads * dk * m, T(0));
        std::vector<T> gq(nb * n * d, T(0)), gk(nb * n * d, T(0)), gv(nb * n * d, T(0));
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t hd = 0; hd < heads; ++hd) {
            detail::gather_head(kp + b * n * d, kt.data(), n, d, hd * dk, dk);
            detail::gather_head(vp + b * n * d, vt.data(), n, d, hd * dk, dk);
            std::fill(gkt.begin(), gkt.end(), T(0));
            std::fill(gvt.begin(), gvt.end(), T(0));
            const std::size_t to = hd * dk * m;
            for (std::size_t p = 0; p < n; ++p) {
              const std::size_t qo = (b * n + p) * d + hd * dk;
              const T* grow = g.data() + qo;
              const T* w = weights->data() + ((b * heads + hd) * n + p) * n;
              const std::size_t c0 = lo(p), len = hi(p) - c0, r0 = c0 + n - 1 - p;
              const T* wc = w + c0;
              std::fill(dw.begin(), dw.begin() + static_cast<long>(len), T(0));
              for (std::size_t j = 0; j < dk; ++j) {
                const T gj = grow[j];
                const T* vr = vt.data() + j * n + c0;
                const T* rvr = rvt.data() + to + j * m + r0;
                T* gvr = gvt.data() + j * n + c0;
                T* grvr = gtv.data() + to + j * m + r0;
                T* dwp = dw.data();
                for (std::size_t c = 0; c < len; ++c) dwp[c] += gj * (vr[c] + rvr[c]);
                for (std::size_t c = 0; c < len; ++c) gvr[c] += wc[c] * gj;
                for (std::size_t c = 0; c < len; ++c) grvr[c] += wc[c] * gj;
              }
              T dot = T(0);
              for (std::size_t c = 0; c < len; ++c) dot += wc[c] * dw[c];
              // dw becomes the scaled logit gradient.
              for (std::size_t c = 0; c < len; ++c) dw[c] = wc[c] * (dw[c] - dot) * scale;
              for (std::size_t j = 0; j < dk; ++j) {
                const T qj = qp[qo + j];
                const T* kr = kt.data() + j * n + c0;
                const T* rqr = rqt.data() + to + j * m + r0;
                const T* rkr = rkt.data() + to + j * m + r0;
                T* gkr = gkt.data() + j * n + c0;
                T* grqr = gtq.data() + to + j * m + r0;
                T* grkr = gtk.data() + to + j * m + r0;
                gq[qo + j] += detail::dot_sum(dw.data(), kr, rqr, len);
                const T* dl = dw.data();
                for (std::size_t c = 0; c < len; ++c) gkr[c] += dl[c] * (qj + rkr[c]);
                for (std::size_t c = 0; c < len; ++c) grqr[c] += dl[c] * qj;
                for (std::size_t c = 0; c < len; ++c) grkr[c] += dl[c] * kr[c];
              }
            }
            detail::scatter_head(gkt.data(), gk.data() + b * n * d, n, d, hd * dk, dk);
            detail::scatter_head(gvt.data(), gv.data() + b * n * d, n, d, hd * dk, dk);
          }
        auto add_into = [](const Tensor<T>& t, const std::vector<T>& src) {
          if (T* s = detail::grad_sink(t)) {
            for (std::size_t i = 0; i < src.size(); ++i) s[i] += src[i];
          }
        };
        add_into(q, gq);
        add_into(k, gk);
        add_into(v, gv);
        auto add_table = [heads, m, dk](const Tensor<T>& t, const std::vector<T>& src) {
          T* s = detail::grad_sink(t);
          if (!s) return;
          for (std::size_t hd = 0; hd < heads; ++hd)
            detail::scatter_head(src.data() + hd * dk * m, s + hd * m * dk, m, dk, 0, dk);
        };
        add_table(rq, gtq);
        add_table(rk, gtk);
        add_table(rv, gtv);
      });
}

// x: [B, n, d] (or [n, d]) -> same shape.
template <typename T>
Tensor<T> axial_attention(const Tensor<T>& x, const AxialAttention<T>& att) {
  if (x.dim() == 2) {
    const Tensor<T> out = axial_attention(ops::reshape(x, {1, x.shape()[0], x.shape()[1]}), att);
    return ops::reshape(out, x.shape());
  }
  const auto& cfg = att.config;
  if (x.dim() != 3 || x.shape()[2] != cfg.d_layer) {
    throw DimensionError(detail::concat("axial_attention: expected [B, n, ", cfg.d_layer, "], got ",
                                        detail::shape_str(x.shape())));
  }
  const std::size_t n = x.shape()[1];
  const std::size_t extent = std::visit([](const auto& t) { return t.extent(); }, att.table);
  if (extent != 2 * n - 1 || n != cfg.length) {
    throw DimensionError(detail::concat("axial_attention: positional table extent ", extent,
                                        " does not match axis length ", n));
  }
  const Tensor<T> mixed = relative_attention(
      ops::matmul(x, att.w_query), ops::matmul(x, att.w_key), ops::matmul(x, att.w_value), att.query_table(),
      att.key_table(), att.value_table(), cfg.heads, detail::score_scale<T>(cfg.scale, n, cfg.d_k()), cfg.span);
  return ops::matmul(mixed, att.w_out);
}

// M_t: x [T, F, d], attention along T per frequency row.
template <typename T>
Tensor<T> multi_head_time(const Tensor<T>& x, const AxialAttention<T>& att) {
  if (x.dim() != 3) throw DimensionError("multi_head_time: expected [T, F, d]");
  const Tensor<T> rows = ops::permute(x, {1, 0, 2});
  return ops::permute(axial_attention(rows, att), {1, 0, 2});
}

// M_f: x [T, F, d], attention along F per frame.
template <typename T>
Tensor<T> multi_head_freq(const Tensor<T>& x, const AxialAttention<T>& att) {
  if (x.dim() != 3) throw DimensionError("multi_head_freq: expected [T, F, d]");
  return axial_attention(x, att);
}

// Splits [T, F, d] at F/2 into (low, high).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> band_split(const Tensor<T>& x) {
  if (x.dim() != 3) throw DimensionError("band_split: expected [T, F, d]");
  const std::size_t f = x.shape()[1];
  if (f % 2 != 0) throw ConfigError(detail::concat("band_split: frequency extent ", f, " is odd"));
  return {ops::slice(x, 1, 0, f / 2), ops::slice(x, 1, f / 2, f)};
}

template <typename T>
Tensor<T> band_join(const Tensor<T>& low, const Tensor<T>& high) {
  return ops::concat<T>({low, high}, 1);
}

// Time + frequency attention, normalized.
template <typename T>
struct TfAttentionBlock {
  AxialAttention<T> time;
  AxialAttention<T> freq;
  nn::LayerNorm<T> norm;

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    time.visit(prefix + ".time", v);
    freq.visit(prefix + ".freq", v);
    norm.visit(prefix + ".norm", v);
  }

  void init(Rng& rng) {
    time.init(rng);
    freq.init(rng);
  }
};

// Time attention + low-band and high-band frequency attention, normalized.
template <typename T>
struct FatAttentionBlock {
  AxialAttention<T> time;
  AxialAttention<T> low;
  AxialAttention<T> high;
  nn::LayerNorm<T> norm;

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    time.visit(prefix + ".time", v);
    low.visit(prefix + ".low", v);
    high.visit(prefix + ".high", v);
    norm.visit(prefix + ".norm", v);
  }

  void init(Rng& rng) {
    time.init(rng);
    low.init(rng);
    high.init(rng);
  }
};

// Head counts per role. TF uses time/freq; FAT uses time/low/high.
struct HeadCounts {
  std::size_t time = 8;
  std::size_t freq = 8;
  std::size_t low_band = 16;
  std::size_t high_band = 2;

  friend bool operator==(const HeadCounts&, const HeadCounts&) = default;
};

struct BlockShape {
  std::size_t frames = 64;
  std::size_t bins = 256;
  std::size_t d_layer = 64;
  std::size_t span = 0;
  ScoreScale scale = ScoreScale::kSequenceLength;
};

template <typename T>
TfAttentionBlock<T> make_tf_block(const BlockShape& s, const HeadCounts& heads) {
  auto cfg = [&](std::size_t h, std::size_t len, Axis axis) {
    AttentionConfig c;
    c.heads = fit_heads(h, s.d_layer);
    c.d_layer = s.d_layer;
    c.length = len;
    c.axis = axis;
    c.span = s.span;
    c.scale = s.scale;
    return c;
  };
  return {AxialAttention<T>(cfg(heads.time, s.frames, Axis::kTime)),
          AxialAttention<T>(cfg(heads.freq, s.bins, Axis::kFrequency)), nn::LayerNorm<T>(s.d_layer)};
}

template <typename T>
FatAttentionBlock<T> make_fat_block(const BlockShape& s, const HeadCounts& heads) {
  if (s.bins % 2 != 0) throw ConfigError(detail::concat("fat block: frequency extent ", s.bins, " is odd"));
  auto cfg = [&](std::size_t h, std::size_t len, Axis axis, Band band, TableKind table) {
    AttentionConfig c;
    c.heads = fit_heads(h, s.d_layer);
    c.d_layer = s.d_layer;
    c.length = len;
    c.axis = axis;
    c.band = band;
    c.table = table;
    c.span = s.span;
    c.scale = s.scale;
    return c;
  };
  return {AxialAttention<T>(cfg(heads.time, s.frames, Axis::kTime, Band::kFull, TableKind::kPerRole)),
          AxialAttention<T>(cfg(heads.low_band, s.bins / 2, Axis::kFrequency, Band::kLow, TableKind::kPerRole)),
          AxialAttention<T>(cfg(heads.high_band, s.bins / 2, Axis::kFrequency, Band::kHigh, TableKind::kShared)),
          nn::LayerNorm<T>(s.d_layer)};
}

// Unnormalized sum M = M_t + M_f.
template <typename T>
Tensor<T> tf_attention_sum(const Tensor<T>& x, const TfAttentionBlock<T>& block) {
  return ops::add(multi_head_time(x, block.time), multi_head_freq(x, block.freq));
}

// Unnormalized sum M = M_t + join(M_lf, M_hf).
template <typename T>
Tensor<T> fat_attention_sum(const Tensor<T>& x, const FatAttentionBlock<T>& block) {
  const auto [low, high] = band_split(x);
  const Tensor<T> banded = band_join(multi_head_freq(low, block.low), multi_head_freq(high, block.high));
  return ops::add(multi_head_time(x, block.time), banded);
}

template <typename T>
Tensor<T> tf_attention_block(const Tensor<T>& x, const TfAttentionBlock<T>& block) {
  return block.norm(tf_attention_sum(x, block));
}

template <typename T>
Tensor<T> fat_attention_block(const Tensor<T>& x, const FatAttentionBlock<T>& block) {
  return block.norm(fat_attention_sum(x, block));
}

// Trainable scalar counts (positional tables, projections) of one attention.
struct AttentionParamCount {
  std::size_t positional = 0;
  std::size_t projection = 0;
  std::size_t total() const { return positional + projection; }
};

template <typename T>
AttentionParamCount count_params(AxialAttention<T>& att) {
  AttentionParamCount c;
  att.visit("", [&](const std::string& name, Tensor<T>& t) {
    (name.find(".rel_") != std::string::npos ? c.positional : c.projection) += t.numel();
  });
  return c;
}

}  // namespace uformer
