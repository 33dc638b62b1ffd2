// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// U-shaped Transformer producing a T x F magnitude mask.
//
//   mag [T,F] -> log1p -> conv3x3 (1 -> d1) -> [T,F,d1]
//   encoder i:  Y1 = LN(X + Attn(X)); Y2 = LN(Y1 + FFN(Y1)); skip_i = Y2;
//               next = Y2 W_i  (d_i -> d_{i+1}, last layer keeps d4)
//   bottleneck: B * PReLU(conv(ReLU(conv(B))))
//   decoder j:  Y1 = LN(X + Attn(X)); Y2 = LN(Y1 + FFN([Y1 ; skip])); next = Y2 U_j (d -> 2d)
//   head:       sigmoid(next w + b) -> [T,F]
//
// FFN is GRU (scan over T per frequency bin) -> ReLU -> affine.

#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "uformer/attention.hpp"

namespace uformer {

enum class Variant { kTf, kFat };

inline const char* variant_name(Variant v) { return v == Variant::kTf ? "tf" : "fat"; }

struct ModelConfig {
  Variant variant = Variant::kFat;
  HeadCounts heads;
  // Encoder widths; each entry halves the previous one.
  std::array<std::size_t, 4> d_layers{64, 32, 16, 8};
  // Frames per segment (L) and network frequency bins (F).
  std::size_t frames = 64;
  std::size_t bins = 256;
  std::size_t span = 0;
  ScoreScale scale = ScoreScale::kSequenceLength;

  // Full-width schedule 512/256/128/64 divided by `divisor`.
  static std::array<std::size_t, 4> schedule(std::size_t divisor) {
    if (divisor == 0 || 64 % divisor != 0) {
      throw ConfigError(detail::concat("model: width divisor ", divisor, " must divide 64"));
    }
    return {512 / divisor, 256 / divisor, 128 / divisor, 64 / divisor};
  }

  // Small configuration used for gradient checks.
  static ModelConfig toy(Variant v = Variant::kFat) {
    ModelConfig c;
    c.variant = v;
    c.heads = HeadCounts{2, 2, 4, 1};
    c.d_layers = {16, 8, 4, 2};
    c.frames = 4;
    c.bins = 8;
    return c;
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (frames == 0) out.emplace_back("frames must be positive");
    if (bins == 0 || bins % 2 != 0) out.push_back(detail::concat("bins must be even and positive, got ", bins));
    if (heads.time == 0 || heads.freq == 0 || heads.low_band == 0 || heads.high_band == 0) {
      out.emplace_back("head counts must be positive");
    }
    for (std::size_t i = 0; i < d_layers.size(); ++i) {
      if (d_layers[i] == 0) out.push_back(detail::concat("d_layers[", i, "] must be positive"));
      if (i > 0 && d_layers[i] * 2 != d_layers[i - 1]) {
        out.push_back(detail::concat("d_layers[", i, "] = ", d_layers[i], " must be half of ",
                                     d_layers[i - 1]));
      }
    }
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ConfigError(msg);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
using AttentionBlock = std::variant<TfAttentionBlock<T>, FatAttentionBlock<T>>;

template <typename T>
Tensor<T> apply_block(const AttentionBlock<T>& block, const Tensor<T>& x) {
  return std::visit(
      [&](const auto& b) -> Tensor<T> {
        if constexpr (std::is_same_v<std::decay_t<decltype(b)>, TfAttentionBlock<T>>) {
          return tf_attention_block(x, b);
        } else {
          return fat_attention_block(x, b);
        }
      },
      block);
}

template <typename T>
struct FeedForward {
  nn::Gru<T> gru;
  nn::Linear<T> out;

  FeedForward() = default;
  FeedForward(std::size_t in, std::size_t d) : gru(in, d), out(d, d) {}

  // x: [T, F, in] -> [T, F, d]
  Tensor<T> operator()(const Tensor<T>& x) const { return out(ops::relu(gru.sequence(x))); }

  void init(Rng& rng) {
    gru.init(rng);
    out.init(rng);
  }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    gru.visit(prefix + ".gru", v);
    out.visit(prefix + ".out", v);
  }
};

template <typename T>
struct SubLayer {
  std::size_t d_layer = 0;
  AttentionBlock<T> attention;
  nn::LayerNorm<T> norm1;
  FeedForward<T> ffn;
  nn::LayerNorm<T> norm2;
  nn::Linear<T> proj;

  void init(Rng& rng) {
    std::visit([&](auto& b) { b.init(rng); }, attention);
    ffn.init(rng);
    proj.init(rng);
  }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    std::visit([&](auto& b) { b.visit(prefix + ".attn", v); }, attention);
    norm1.visit(prefix + ".norm1", v);
    ffn.visit(prefix + ".ffn", v);
    norm2.visit(prefix + ".norm2", v);
    proj.visit(prefix + ".proj", v);
  }
};

template <typename T>
struct MaskingModule {
  nn::Conv2d<T> conv1;
  nn::Conv2d<T> conv2;
  Tensor<T> alpha;  // PReLU slopes, one per channel

  MaskingModule() = default;
  explicit MaskingModule(std::size_t channels)
      : conv1(channels, channels, 3, 3), conv2(channels, channels, 3, 3),
        alpha(make_param<T>({channels}, T(0.25))) {}

  // x: [T, F, c] -> x gated by the two-layer convolutional map.
  Tensor<T> operator()(const Tensor<T>& x) const {
    const Tensor<T> chw = ops::permute(x, {2, 0, 1});
    const Tensor<T> gate = ops::prelu(conv2(ops::relu(conv1(chw))), alpha, 0);
    return ops::mul(x, ops::permute(gate, {1, 2, 0}));
  }

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
  }

  template <typename V>
  void visit(const std::string& prefix, V&& v) {
    conv1.visit(prefix + ".conv1", v);
    conv2.visit(prefix + ".conv2", v);
    v(prefix + ".prelu_alpha", alpha);
  }
};

template <typename T>
struct EncoderOutput {
  Tensor<T> skip;  // [T, F, d]
  Tensor<T> next;  // [T, F, d']
};

// Y1 = LN(X + Attn(X)); Y2 = LN(Y1 + FFN(Y1)); next = proj(Y2).
template <typename T>
EncoderOutput<T> encode_sublayer(const Tensor<T>& x, const SubLayer<T>& layer) {
  if (x.dim() != 3 || x.shape()[2] != layer.d_layer) {
    throw DimensionError(detail::concat("encode_sublayer: expected [T, F, ", layer.d_layer, "], got ",
                                        detail::shape_str(x.shape())));
  }
  const Tensor<T> y1 = layer.norm1(ops::add(x, apply_block(layer.attention, x)));
  const Tensor<T> y2 = layer.norm2(ops::add(y1, layer.ffn(y1)));
  return {y2, layer.proj(y2)};
}

template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FeedForward<T>& params) {
  return params(x);
}

// Attention on x, skip concatenated inside the feed-forward stage, then up-projection.
template <typename T>
Tensor<T> decode_sublayer(const Tensor<T>& x, const Tensor<T>& skip, const SubLayer<T>& layer,
                          const std::string& name = "decoder") {
  if (x.shape() != skip.shape()) {
    throw DimensionError("decode_sublayer: wiring error in " + name + ": input " +
                         detail::shape_str(x.shape()) + " vs skip " + detail::shape_str(skip.shape()));
  }
  if (x.dim() != 3 || x.shape()[2] != layer.d_layer) {
    throw DimensionError(detail::concat("decode_sublayer: expected [T, F, ", layer.d_layer, "] in ",
                                        name, ", got ", detail::shape_str(x.shape())));
  }
  const Tensor<T> y1 = layer.norm1(ops::add(x, apply_block(layer.attention, x)));
  const Tensor<T> joined = ops::concat<T>({y1, skip}, 2);
  const Tensor<T> y2 = layer.norm2(ops::add(y1, layer.ffn(joined)));
  return layer.proj(y2);
}

template <typename T>
class UTransformer {
 public:
  static constexpr std::size_t kDepth = 4;

  UTransformer() = default;

  explicit UTransformer(const ModelConfig& config) : config_(config) {
    config.validate();
    const auto& d = config.d_layers;
    input_ = nn::Conv2d<T>(1, d[0], 3, 3);
    for (std::size_t i = 0; i < kDepth; ++i) {
      const std::size_t next = i + 1 < kDepth ? d[i + 1] : d[i];
      encoders_[i] = make_layer(d[i], d[i], next);
    }
    masking_ = MaskingModule<T>(d[kDepth - 1]);
    for (std::size_t j = 0; j < kDepth; ++j) {
      const std::size_t width = d[kDepth - 1 - j];
      decoders_[j] = make_layer(width, 2 * width, 2 * width);
    }
    head_ = nn::Linear<T>(2 * d[0], 1);
    check_u_shape();
  }

  const ModelConfig& config() const { return config_; }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    input_.init(rng);
    for (auto& e : encoders_) e.init(rng);
    masking_.init(rng);
    for (auto& dl : decoders_) dl.init(rng);
    head_.init(rng);
  }

  template <typename V>
  void visit(V&& v) {
    input_.visit("input", v);
    for (std::size_t i = 0; i < kDepth; ++i) encoders_[i].visit("enc" + std::to_string(i), v);
    masking_.visit("mask", v);
    for (std::size_t j = 0; j < kDepth; ++j) decoders_[j].visit("dec" + std::to_string(j), v);
    head_.visit("head", v);
  }

  ParamList<T> parameters() {
    ParamList<T> out;
    visit([&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  // noisy_mag: [L, F] -> mask in (0, 1), same shape.
  Tensor<T> forward(const Tensor<T>& noisy_mag) const {
    if (noisy_mag.dim() != 2 || noisy_mag.shape()[0] != config_.frames || noisy_mag.shape()[1] != config_.bins) {
      throw DimensionError(detail::concat("forward: expected magnitude [", config_.frames, ", ",
                                          config_.bins, "], got ", detail::shape_str(noisy_mag.shape())));
    }
    const std::size_t t = config_.frames, f = config_.bins;
    const Tensor<T> lifted = input_(ops::reshape(ops::log1p(noisy_mag), {1, t, f}));
    Tensor<T> x = ops::permute(lifted, {1, 2, 0});
    std::array<Tensor<T>, kDepth> skips;
    for (std::size_t i = 0; i < kDepth; ++i) {
      auto out = encode_sublayer(x, encoders_[i]);
      skips[i] = out.skip;
      x = out.next;
    }
    x = masking_(x);
    for (std::size_t j = 0; j < kDepth; ++j) {
      x = decode_sublayer(x, skips[kDepth - 1 - j], decoders_[j], "dec" + std::to_string(j));
    }
    return ops::reshape(ops::sigmoid(head_(x)), {t, f});
  }

  SubLayer<T>& encoder(std::size_t i) { return encoders_.at(i); }
  SubLayer<T>& decoder(std::size_t j) { return decoders_.at(j); }
  MaskingModule<T>& masking() { return masking_; }
  nn::Linear<T>& head() { return head_; }

  // Deep copy of parameter values from another model of the same config.
  void copy_from(UTransformer& other) {
    auto mine = parameters();
    auto theirs = other.parameters();
    if (mine.size() != theirs.size()) throw DimensionError("copy_from: parameter count mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (mine[i].tensor.shape() != theirs[i].tensor.shape()) {
        throw DimensionError("copy_from: shape mismatch for " + mine[i].name);
      }
      std::copy(theirs[i].tensor.data().begin(), theirs[i].tensor.data().end(), mine[i].tensor.data().begin());
    }
  }

 private:
  SubLayer<T> make_layer(std::size_t d, std::size_t ffn_in, std::size_t out) const {
    BlockShape shape{config_.frames, config_.bins, d, config_.span, config_.scale};
    SubLayer<T> layer;
    layer.d_layer = d;
    if (config_.variant == Variant::kTf) {
      layer.attention = make_tf_block<T>(shape, config_.heads);
    } else {
      layer.attention = make_fat_block<T>(shape, config_.heads);
    }
    layer.norm1 = nn::LayerNorm<T>(d);
    layer.ffn = FeedForward<T>(ffn_in, d);
    layer.norm2 = nn::LayerNorm<T>(d);
    layer.proj = nn::Linear<T>(d, out);
    return layer;
  }

  void check_u_shape() const {
    for (std::size_t j = 0; j < kDepth; ++j) {
      const std::size_t skip_width = encoders_[kDepth - 1 - j].d_layer;
      const std::size_t input_width = j == 0 ? encoders_[kDepth - 1].proj.out_features()
                                             : decoders_[j - 1].proj.out_features();
      if (decoders_[j].d_layer != skip_width || input_width != skip_width) {
        throw DimensionError(detail::concat("model: decoder ", j, " expects width ", decoders_[j].d_layer,
                                            " but receives input ", input_width, " and skip ", skip_width));
      }
    }
    if (decoders_[kDepth - 1].proj.out_features() != head_.in_features()) {
      throw DimensionError("model: output head width mismatch");
    }
  }

  ModelConfig config_;
  nn::Conv2d<T> input_;
  std::array<SubLayer<T>, kDepth> encoders_;
  MaskingModule<T> masking_;
  std::array<SubLayer<T>, kDepth> decoders_;
  nn::Linear<T> head_;
};

template <typename T>
UTransformer<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  UTransformer<T> model(config);
  model.init(seed);
  return model;
}

}  // namespace uformer
