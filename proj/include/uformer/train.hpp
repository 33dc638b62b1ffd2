// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

#include "uformer/data.hpp"
#include "uformer/metrics.hpp"
#include "uformer/model.hpp"
#include "uformer/optim.hpp"

namespace uformer {

enum class LossKind { kMagnitudeMse, kIrmMse };

inline const char* loss_name(LossKind k) { return k == LossKind::kMagnitudeMse ? "magnitude_mse" : "irm_mse"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "magnitude_mse") return LossKind::kMagnitudeMse;
  if (s == "irm_mse") return LossKind::kIrmMse;
  throw ConfigError("unknown loss '" + s + "' (expected magnitude_mse or irm_mse)");
}

struct TrainConfig {
  double lr = 8e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::kMagnitudeMse;
  std::size_t checkpoint_interval = 0;  // steps; 0 = only at epoch ends
  double clip_norm = 5.0;
  std::size_t max_steps = 0;  // 0 = no limit

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError(detail::concat("train: lr must be positive, got ", lr));
    if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
    if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  }
};

// Segment tensors converted once to the model scalar type.
template <typename T>
struct Batchable {
  Tensor<T> noisy;
  Tensor<T> clean;
  Tensor<T> irm;
  std::size_t valid = 0;
};

template <typename T>
Batchable<T> prepare(const Segment& s) {
  return {s.noisy_mag.cast<T>(), s.clean_mag.cast<T>(), s.irm.cast<T>(), s.valid};
}

template <typename T>
std::vector<Batchable<T>> prepare_all(const std::vector<Segment>& segs) {
  std::vector<Batchable<T>> out;
  out.reserve(segs.size());
  for (const auto& s : segs) out.push_back(prepare<T>(s));
  return out;
}

// Mean squared error over the unpadded rows of one segment.
template <typename T>
Tensor<T> segment_loss(const Tensor<T>& mask, const Batchable<T>& seg, LossKind kind) {
  if (seg.valid == 0) throw DataError("loss: segment is entirely padding");
  if (mask.shape() != seg.noisy.shape()) {
    throw DimensionError("loss: mask " + detail::shape_str(mask.shape()) + " vs segment " + detail::shape_str(seg.noisy.shape()));
  }
  const std::size_t rows = mask.shape()[0];
  auto valid = [&](const Tensor<T>& x) { return seg.valid == rows ? x : ops::slice(x, 0, 0, seg.valid); };
  const Tensor<T> m = valid(mask);
  const Tensor<T> diff = kind == LossKind::kMagnitudeMse ? ops::sub(ops::mul(m, valid(seg.noisy)), valid(seg.clean))
                                                         : ops::sub(m, valid(seg.irm));
  return ops::mean(ops::square(diff));
}

template <typename T>
Tensor<T> batch_loss(const UTransformer<T>& model, const std::vector<const Batchable<T>*>& batch, LossKind kind) {
  if (batch.empty()) throw DataError("loss: empty batch");
  Tensor<T> total = segment_loss(model.forward(batch[0]->noisy), *batch[0], kind);
  for (std::size_t i = 1; i < batch.size(); ++i) {
    total = ops::add(total, segment_loss(model.forward(batch[i]->noisy), *batch[i], kind));
  }
  return ops::scale(total, T(1) / static_cast<T>(batch.size()));
}

template <typename T>
double mean_loss(const UTransformer<T>& model, const std::vector<Batchable<T>>& segs, LossKind kind) {
  if (segs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& s : segs) total += static_cast<double>(segment_loss(model.forward(s.noisy), s, kind).item());
  return total / static_cast<double>(segs.size());
}

template <typename T>
struct TrainState {
  AdamState<T> adam;
  std::uint64_t epoch = 0;  // current epoch
  std::uint64_t batch = 0;  // next batch within the epoch
  std::uint64_t step = 0;   // optimizer steps taken
};

struct HistoryRow {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  double dev_loss = std::numeric_limits<double>::quiet_NaN();  // set on the last step of an epoch
};

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write history '" + path + "'");
  out.precision(9);
  out << "step,train_loss,dev_loss\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.train_loss << ',';
    if (!std::isnan(r.dev_loss)) out << r.dev_loss;
    out << '\n';
  }
}

// Reads rows written by write_history_csv.
inline std::vector<HistoryRow> read_history_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open history '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "step,train_loss,dev_loss") throw DataError("history '" + path + "': bad header");
  std::vector<HistoryRow> rows;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    const auto a = line.find(','), b = line.find(',', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) throw DataError(detail::concat("history '", path, "':", lineno, ": malformed row"));
    HistoryRow r;
    try {
      r.step = std::stoull(line.substr(0, a));
      r.train_loss = std::stod(line.substr(a + 1, b - a - 1));
      if (b + 1 < line.size()) r.dev_loss = std::stod(line.substr(b + 1));
    } catch (const std::exception&) {
      throw DataError(detail::concat("history '", path, "':", lineno, ": malformed row"));
    }
    rows.push_back(r);
  }
  return rows;
}

// Visit order of training segments in one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 1000 + epoch));
  rng.shuffle(order);
  return order;
}

template <typename T>
struct TrainHooks {
  std::function<void(const TrainState<T>&, const HistoryRow&)> on_step;
  std::function<void(const TrainState<T>&, double dev_loss)> on_epoch;
  std::function<void(const TrainState<T>&)> checkpoint;
};

// Adam on the batch-mean loss with global-norm clipping. Resumes from `state`
// (epoch, batch) and stops after cfg.epochs epochs or cfg.max_steps steps.
template <typename T>
std::vector<HistoryRow> train_loop(UTransformer<T>& model, const std::vector<Batchable<T>>& train,
                                   const std::vector<Batchable<T>>& dev, const TrainConfig& cfg, TrainState<T>& state,
                                   const TrainHooks<T>& hooks = {}) {
  std::vector<HistoryRow> history;
  if (cfg.epochs == 0) return history;
  cfg.validate();
  if (train.empty()) throw DataError("train: no training segments");
  state.adam.config.lr = cfg.lr;
  const ParamList<T> params = model.parameters();
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  while (state.epoch < cfg.epochs) {
    const auto order = epoch_order(train.size(), cfg.seed, state.epoch);
    while (state.batch < batches) {
      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) return history;
      std::vector<const Batchable<T>*> batch;
      for (std::size_t i = state.batch * cfg.batch_size; i < std::min(train.size(), (state.batch + 1) * cfg.batch_size); ++i) {
        batch.push_back(&train[order[i]]);
      }
      zero_grads(params);
      Tape<T> tape;
      Tensor<T> loss;
      {
        auto rec = tape.record();
        loss = batch_loss(model, batch, cfg.loss);
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericalError(detail::concat("train: non-finite loss at step ", state.step + 1, " (epoch ", state.epoch, ")"));
      }
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adam_step(params, state.adam);
      ++state.step;
      ++state.batch;
      HistoryRow row{state.step, value};
      const bool epoch_end = state.batch == batches;
      if (epoch_end) row.dev_loss = mean_loss(model, dev, cfg.loss);
      history.push_back(row);
      if (hooks.on_step) hooks.on_step(state, row);
      if (epoch_end) {
        ++state.epoch;
        state.batch = 0;
        if (hooks.on_epoch) hooks.on_epoch(state, row.dev_loss);
        if (hooks.checkpoint) hooks.checkpoint(state);
        break;
      } else if (hooks.checkpoint && cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) {
        hooks.checkpoint(state);
      }
    }
  }
  return history;
}

// Segment-wise forward over zero-padded L-frame segments of noisy_mag [T, F];
// masks are stitched and the padded tail dropped: [T, F].
template <typename T>
Tensor<double> predict_mask(const UTransformer<T>& model, const Tensor<double>& noisy_mag) {
  if (noisy_mag.dim() != 2) throw DimensionError("predict_mask: expected [T, F], got " + detail::shape_str(noisy_mag.shape()));
  const std::size_t frames = noisy_mag.shape()[0], f = noisy_mag.shape()[1], len = model.config().frames;
  Tensor<double> mask({frames, f});
  for (std::size_t start = 0; start < frames; start += len) {
    const std::size_t valid = std::min(len, frames - start);
    Tensor<T> seg({len, f});
    for (std::size_t i = 0; i < valid * f; ++i) seg[i] = static_cast<T>(noisy_mag[start * f + i]);
    const Tensor<T> m = model.forward(seg);
    for (std::size_t i = 0; i < valid * f; ++i) mask[start * f + i] = static_cast<double>(m[i]);
  }
  return mask;
}

template <typename T>
Tensor<double> predict_mask(const UTransformer<T>& model, const MixtureExample& ex) {
  return predict_mask(model, ex.noisy_mag);
}

using MaskFn = std::function<Tensor<double>(const MixtureExample&)>;

inline MaskFn identity_mask() {
  return [](const MixtureExample& ex) { return Tensor<double>::ones(ex.noisy_mag.shape()); };
}

inline MaskFn oracle_irm_mask() {
  return [](const MixtureExample& ex) { return ex.irm; };
}

template <typename T>
MaskFn model_mask(const UTransformer<T>& model) {
  return [&model](const MixtureExample& ex) { return predict_mask(model, ex); };
}

inline MetricRow evaluate_example(const MixtureExample& ex, const MaskFn& mask_fn, const StftConfig& cfg = {}) {
  MetricRow row;
  row.utterance_id = ex.id;
  row.snr_db = ex.snr_db;
  const Waveform enhanced = reconstruct(ex.noisy, mask_fn(ex), cfg);
  row.enhanced = score(ex.clean, enhanced);
  row.unprocessed = score(ex.clean, ex.mixture);
  return row;
}

// Worker count: UFORMER_THREADS if set, else hardware concurrency.
inline std::size_t worker_threads(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("UFORMER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError(detail::concat("UFORMER_THREADS='", env, "' is not a positive integer"));
    n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Scores every example; rows come back in input order regardless of threading.
inline MetricReport evaluate(const std::vector<MixtureExample>& examples, const MaskFn& mask_fn, const StftConfig& cfg = {}) {
  MetricReport report;
  report.rows.resize(examples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next++) < examples.size();) {
      try {
        report.rows[i] = evaluate_example(examples[i], mask_fn, cfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = worker_threads(examples.size());
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

inline std::vector<MixtureExample> load_split(const Manifest& m, Split split, const StftConfig& cfg = {}) {
  auto records = m.split(split);
  if (records.empty()) throw DataError(detail::concat("manifest has no '", split_name(split), "' utterances"));
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<MixtureExample> out;
  for (const auto& r : records) out.push_back(load_example(r, cfg));
  return out;
}

inline std::vector<Segment> segment_all(const std::vector<MixtureExample>& examples, std::size_t frames) {
  std::vector<Segment> out;
  for (const auto& ex : examples) {
    auto segs = segment(ex, frames);
    out.insert(out.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
  }
  return out;
}

// utterance_id,snr_db,stoi,fwsnrseg. Unprocessed scores use "<id>/unprocessed";
// the two "mean" rows average the rows above them.
inline void write_metrics_csv(const std::string& path, const MetricReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write metrics '" + path + "'");
  out.precision(10);
  out << "utterance_id,snr_db,stoi,fwsnrseg\n";
  double snr = 0.0;
  for (const auto& r : report.rows) {
    out << r.utterance_id << ',' << r.snr_db << ',' << r.enhanced.stoi << ',' << r.enhanced.fwsnrseg << '\n';
    out << r.utterance_id << "/unprocessed," << r.snr_db << ',' << r.unprocessed.stoi << ',' << r.unprocessed.fwsnrseg << '\n';
    snr += r.snr_db;
  }
  if (!report.rows.empty()) snr /= static_cast<double>(report.rows.size());
  const auto e = report.mean_enhanced(), u = report.mean_unprocessed();
  out << "mean," << snr << ',' << e.stoi << ',' << e.fwsnrseg << '\n';
  out << "mean/unprocessed," << snr << ',' << u.stoi << ',' << u.fwsnrseg << '\n';
}

}  // namespace uformer
