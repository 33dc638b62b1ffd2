// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Binary checkpoints: model config, named float32 parameter arrays, Adam state
// and training counters. Layout (all integers and floats little-endian):
//
//   "UFMRCKPT" u32 version
//   model config, train config, STFT config, counters, Adam config and step
//   u32 len + bytes      training seed stream state
//   u64 count, then per parameter: u32 len + name, u32 rank, u64 dims, f32 data
//   u8 has_moments, then per parameter: f32 first moment, f32 second moment
//   "UFMR_END"

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "uformer/model.hpp"
#include "uformer/train.hpp"

namespace uformer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'U', 'F', 'M', 'R', 'C', 'K', 'P', 'T'};
inline constexpr char kCheckpointEnd[8] = {'U', 'F', 'M', 'R', '_', 'E', 'N', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const CheckpointArray&, const CheckpointArray&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig model;
  TrainConfig train;
  StftConfig stft;
  std::uint64_t epoch = 0, batch = 0, step = 0;
  AdamConfig adam;
  std::uint64_t adam_step = 0;
  // State of the generator that orders the current epoch.
  std::string rng_state;
  std::vector<CheckpointArray> params;
  std::vector<std::vector<float>> first_moment, second_moment;  // empty before the first step
};

namespace ckpt_detail {

class Writer {
 public:
  template <typename V>
  void pod(V v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(V));
  }
  void u8(std::uint8_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string path) : buf_(std::move(bytes)), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw DataError("checkpoint '" + path_ + "' is corrupt: " + why);
  }
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) fail(detail::concat("truncated while reading ", what, " at byte ", pos_));
  }
  template <typename V>
  V pod(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::uint8_t u8(const char* what) { return pod<std::uint8_t>(what); }
  std::uint32_t u32(const char* what) { return pod<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return pod<std::uint64_t>(what); }
  double f64(const char* what) { return pod<double>(what); }
  std::string str(const char* what, std::size_t max_len = 1 << 20) {
    const std::uint32_t n = u32(what);
    if (n > max_len) fail(detail::concat(what, " length ", n, " is implausible"));
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline void write_floats(Writer& w, const std::vector<float>& v) { w.raw(v.data(), v.size() * sizeof(float)); }

template <typename T>
std::vector<float> to_f32(const std::vector<T>& v) {
  return std::vector<float>(v.begin(), v.end());
}

template <typename T>
std::vector<float> to_f32(std::span<const T> v) {
  return std::vector<float>(v.begin(), v.end());
}

inline std::vector<float> read_floats(Reader& r, std::size_t n, const char* what) {
  std::vector<float> v(n);
  r.raw(v.data(), n * sizeof(float), what);
  return v;
}

}  // namespace ckpt_detail

template <typename T>
Checkpoint make_checkpoint(UTransformer<T>& model, const TrainState<T>& state, const TrainConfig& cfg,
                           const StftConfig& stft = {}) {
  Checkpoint c;
  c.model = model.config();
  c.train = cfg;
  c.stft = stft;
  c.epoch = state.epoch;
  c.batch = state.batch;
  c.step = state.step;
  c.adam = state.adam.config;
  c.adam_step = state.adam.step;
  c.rng_state = Rng(derive_seed(cfg.seed, 1000 + state.epoch)).state();
  for (auto& p : model.parameters()) {
    c.params.push_back({p.name, p.tensor.shape(), ckpt_detail::to_f32(std::span<const T>(p.tensor.data()))});
  }
  for (const auto& m : state.adam.first_moment) c.first_moment.push_back(ckpt_detail::to_f32(m));
  for (const auto& m : state.adam.second_moment) c.second_moment.push_back(ckpt_detail::to_f32(m));
  return c;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& c) {
  ckpt_detail::Writer w;
  w.raw(kCheckpointMagic, 8);
  w.u32(c.version);
  const auto& m = c.model;
  w.u8(static_cast<std::uint8_t>(m.variant));
  for (std::size_t h : {m.heads.time, m.heads.freq, m.heads.low_band, m.heads.high_band}) w.u64(h);
  for (std::size_t d : m.d_layers) w.u64(d);
  w.u64(m.frames);
  w.u64(m.bins);
  w.u64(m.span);
  w.u8(static_cast<std::uint8_t>(m.scale));
  const auto& t = c.train;
  w.f64(t.lr);
  w.u64(t.epochs);
  w.u64(t.batch_size);
  w.u64(t.seed);
  w.u8(static_cast<std::uint8_t>(t.loss));
  w.u64(t.checkpoint_interval);
  w.f64(t.clip_norm);
  w.u64(t.max_steps);
  w.u64(c.stft.nfft);
  w.u64(c.stft.hop);
  w.u32(static_cast<std::uint32_t>(c.stft.sample_rate));
  w.u64(c.epoch);
  w.u64(c.batch);
  w.u64(c.step);
  w.f64(c.adam.lr);
  w.f64(c.adam.beta1);
  w.f64(c.adam.beta2);
  w.f64(c.adam.epsilon);
  w.u64(c.adam_step);
  w.str(c.rng_state);
  w.u64(c.params.size());
  for (const auto& p : c.params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t e : p.shape) w.u64(e);
    ckpt_detail::write_floats(w, p.values);
  }
  const bool moments = !c.first_moment.empty();
  w.u8(moments ? 1 : 0);
  if (moments) {
    if (c.first_moment.size() != c.params.size() || c.second_moment.size() != c.params.size()) {
      throw DimensionError("checkpoint: optimizer moments do not match the parameter list");
    }
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      ckpt_detail::write_floats(w, c.first_moment[i]);
      ckpt_detail::write_floats(w, c.second_moment[i]);
    }
  }
  w.raw(kCheckpointEnd, 8);

  // Write to a sibling file first so a crash never leaves a half-written checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + tmp + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw DataError("short write to checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

template <typename T>
void save_checkpoint(const std::string& path, UTransformer<T>& model, const TrainState<T>& state,
                     const TrainConfig& cfg, const StftConfig& stft = {}) {
  write_checkpoint(path, make_checkpoint(model, state, cfg, stft));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ckpt_detail::Reader r(std::move(bytes), path);
  char magic[8];
  r.raw(magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) r.fail("bad magic (not a uformer checkpoint)");
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion) {
    throw DataError(detail::concat("checkpoint '", path, "' has format version ", c.version, ", this build reads version ",
                                   kCheckpointVersion));
  }
  auto& m = c.model;
  const std::uint8_t variant = r.u8("variant");
  if (variant > 1) r.fail(detail::concat("unknown model variant ", int(variant)));
  m.variant = static_cast<Variant>(variant);
  m.heads.time = r.u64("heads");
  m.heads.freq = r.u64("heads");
  m.heads.low_band = r.u64("heads");
  m.heads.high_band = r.u64("heads");
  for (auto& d : m.d_layers) d = r.u64("d_layers");
  m.frames = r.u64("frames");
  m.bins = r.u64("bins");
  m.span = r.u64("span");
  const std::uint8_t scale = r.u8("scale");
  if (scale > 1) r.fail(detail::concat("unknown score scale ", int(scale)));
  m.scale = static_cast<ScoreScale>(scale);
  auto& t = c.train;
  t.lr = r.f64("lr");
  t.epochs = r.u64("epochs");
  t.batch_size = r.u64("batch_size");
  t.seed = r.u64("seed");
  const std::uint8_t loss = r.u8("loss");
  if (loss > 1) r.fail(detail::concat("unknown loss kind ", int(loss)));
  t.loss = static_cast<LossKind>(loss);
  t.checkpoint_interval = r.u64("checkpoint_interval");
  t.clip_norm = r.f64("clip_norm");
  t.max_steps = r.u64("max_steps");
  c.stft.nfft = r.u64("nfft");
  c.stft.hop = r.u64("hop");
  c.stft.sample_rate = static_cast<int>(r.u32("sample rate"));
  c.epoch = r.u64("epoch");
  c.batch = r.u64("batch");
  c.step = r.u64("step");
  c.adam.lr = r.f64("adam lr");
  c.adam.beta1 = r.f64("adam beta1");
  c.adam.beta2 = r.f64("adam beta2");
  c.adam.epsilon = r.f64("adam epsilon");
  c.adam_step = r.u64("adam step");
  c.rng_state = r.str("rng state");
  const std::uint64_t count = r.u64("parameter count");
  if (count > 100000) r.fail(detail::concat("parameter count ", count, " is implausible"));
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointArray p;
    p.name = r.str("parameter name", 4096);
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) r.fail(detail::concat("parameter '", p.name, "' has rank ", rank));
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t e = r.u64("shape");
      if (e == 0 || e > (1ull << 32)) r.fail(detail::concat("parameter '", p.name, "' has extent ", e));
      p.shape.push_back(e);
      numel *= e;
    }
    p.values = ckpt_detail::read_floats(r, numel, "parameter values");
    c.params.push_back(std::move(p));
  }
  const std::uint8_t moments = r.u8("moment flag");
  if (moments > 1) r.fail("bad moment flag");
  if (moments) {
    for (const auto& p : c.params) {
      c.first_moment.push_back(ckpt_detail::read_floats(r, p.values.size(), "first moment"));
      c.second_moment.push_back(ckpt_detail::read_floats(r, p.values.size(), "second moment"));
    }
  }
  char end[8];
  r.raw(end, 8, "end marker");
  if (std::memcmp(end, kCheckpointEnd, 8) != 0) r.fail("bad end marker");
  if (!r.at_end()) r.fail("trailing bytes after end marker");
  return c;
}

// Copies checkpoint parameters into a model with the same config and names.
template <typename T>
void restore_params(const Checkpoint& c, UTransformer<T>& model) {
  if (!(c.model == model.config())) throw ConfigError("checkpoint: model config differs from the target model");
  auto params = model.parameters();
  if (params.size() != c.params.size()) {
    throw DataError(detail::concat("checkpoint: ", c.params.size(), " parameters stored, model has ", params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = c.params[i];
    if (src.name != params[i].name || src.shape != params[i].tensor.shape()) {
      throw DataError("checkpoint: parameter " + std::to_string(i) + " is '" + src.name + "' " +
                      detail::shape_str(src.shape) + ", model expects '" + params[i].name + "' " +
                      detail::shape_str(params[i].tensor.shape()));
    }
    auto dst = params[i].tensor.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src.values[j]);
  }
}

template <typename T>
UTransformer<T> model_from_checkpoint(const Checkpoint& c) {
  UTransformer<T> model(c.model);
  restore_params(c, model);
  return model;
}

// Parameters, optimizer state and counters for resuming training.
template <typename T>
void restore(const Checkpoint& c, UTransformer<T>& model, TrainState<T>& state) {
  restore_params(c, model);
  state = TrainState<T>{};
  state.epoch = c.epoch;
  state.batch = c.batch;
  state.step = c.step;
  state.adam.config = c.adam;
  state.adam.step = c.adam_step;
  for (const auto& m : c.first_moment) state.adam.first_moment.emplace_back(m.begin(), m.end());
  for (const auto& m : c.second_moment) state.adam.second_moment.emplace_back(m.begin(), m.end());
}

}  // namespace uformer
