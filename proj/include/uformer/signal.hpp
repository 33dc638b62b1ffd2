// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "uformer/fft.hpp"
#include "uformer/tensor.hpp"
#include "uformer/wav.hpp"

namespace uformer {

struct StftConfig {
  std::size_t nfft = 512;
  std::size_t hop = 256;
  int sample_rate = 16000;

  // Network bins: the Nyquist bin is held aside so the count stays even.
  std::size_t bins() const { return nfft / 2; }

  void validate() const {
    if (nfft < 2 || nfft % 2 != 0) throw ConfigError(detail::concat("stft: nfft ", nfft, " must be even"));
    if (hop == 0 || hop > nfft / 2 || nfft % hop != 0) {
      throw ConfigError(detail::concat("stft: hop ", hop, " must divide nfft ", nfft, " and be at most nfft/2"));
    }
    if (sample_rate <= 0) throw ConfigError("stft: sample rate must be positive");
  }

  // Square root of the periodic Hann window. Analysis and synthesis both use
  // it, so the per-sample product is a Hann window and sums to a constant.
  std::vector<double> window() const {
    std::vector<double> w(nfft);
    for (std::size_t n = 0; n < nfft; ++n) {
      w[n] = std::sin(std::numbers::pi * static_cast<double>(n) / static_cast<double>(nfft));
    }
    return w;
  }

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

struct Spectrogram {
  std::size_t num_frames = 0;
  std::size_t nfft = 0;
  std::size_t hop = 0;
  int sample_rate = 0;
  std::size_t length = 0;  // samples of the analysed waveform
  std::vector<std::complex<double>> frames;  // [num_frames, nfft/2 + 1]

  std::size_t full_bins() const { return nfft / 2 + 1; }
  std::complex<double>& at(std::size_t t, std::size_t k) { return frames[t * full_bins() + k]; }
  const std::complex<double>& at(std::size_t t, std::size_t k) const { return frames[t * full_bins() + k]; }

  // |X| over the network bins, Nyquist dropped: [T, nfft/2].
  Tensor<double> magnitude() const {
    const std::size_t f = nfft / 2;
    Tensor<double> m({num_frames, f});
    for (std::size_t t = 0; t < num_frames; ++t)
      for (std::size_t k = 0; k < f; ++k) m[t * f + k] = std::abs(at(t, k));
    return m;
  }
};

namespace signal_detail {

inline std::size_t left_pad(const StftConfig& c) { return c.nfft - c.hop; }

inline std::size_t frame_count(std::size_t length, const StftConfig& c) {
  return (length - 1) / c.hop + c.nfft / c.hop;
}

}  // namespace signal_detail

// Frames the waveform with nfft - hop zeros in front so that every sample is
// covered by nfft/hop frames; the tail is zero padded to a whole frame.
inline Spectrogram stft(const Waveform& w, const StftConfig& cfg = {}) {
  cfg.validate();
  if (w.sample_rate != cfg.sample_rate) {
    throw DataError(detail::concat("stft: waveform rate ", w.sample_rate, " Hz does not match ", cfg.sample_rate, " Hz"));
  }
  if (w.size() < cfg.nfft) {
    throw DataError(detail::concat("stft: input has ", w.size(), " samples, need at least ", cfg.nfft));
  }
  Spectrogram s;
  s.nfft = cfg.nfft;
  s.hop = cfg.hop;
  s.sample_rate = cfg.sample_rate;
  s.length = w.size();
  s.num_frames = signal_detail::frame_count(w.size(), cfg);
  s.frames.resize(s.num_frames * s.full_bins());

  const std::size_t pad = signal_detail::left_pad(cfg);
  std::vector<double> padded((s.num_frames - 1) * cfg.hop + cfg.nfft, 0.0);
  std::copy(w.samples.begin(), w.samples.end(), padded.begin() + static_cast<long>(pad));
  const auto win = cfg.window();
  std::vector<double> frame(cfg.nfft);
  for (std::size_t t = 0; t < s.num_frames; ++t) {
    for (std::size_t n = 0; n < cfg.nfft; ++n) frame[n] = padded[t * cfg.hop + n] * win[n];
    const auto spec = fft::rfft(frame, cfg.nfft);
    std::copy(spec.begin(), spec.end(), s.frames.begin() + static_cast<long>(t * s.full_bins()));
  }
  return s;
}

// Weighted overlap-add: y = sum_t w * frame_t / sum_t w^2.
inline Waveform istft(const Spectrogram& s, const StftConfig& cfg = {}) {
  cfg.validate();
  if (s.nfft != cfg.nfft || s.hop != cfg.hop || s.sample_rate != cfg.sample_rate) {
    throw DataError(detail::concat("istft: spectrogram (nfft ", s.nfft, ", hop ", s.hop, ", ", s.sample_rate,
                                   " Hz) does not match config (nfft ", cfg.nfft, ", hop ", cfg.hop, ", ",
                                   cfg.sample_rate, " Hz)"));
  }
  if (s.frames.size() != s.num_frames * s.full_bins()) throw DataError("istft: frame buffer size mismatch");
  const auto win = cfg.window();
  const std::size_t total = (s.num_frames - 1) * cfg.hop + cfg.nfft;
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  for (std::size_t t = 0; t < s.num_frames; ++t) {
    const std::span<const std::complex<double>> row(s.frames.data() + t * s.full_bins(), s.full_bins());
    const auto frame = fft::irfft(row, cfg.nfft);
    for (std::size_t n = 0; n < cfg.nfft; ++n) {
      acc[t * cfg.hop + n] += frame[n] * win[n];
      norm[t * cfg.hop + n] += win[n] * win[n];
    }
  }
  Waveform out;
  out.sample_rate = s.sample_rate;
  out.samples.resize(s.length);
  const std::size_t pad = signal_detail::left_pad(cfg);
  for (std::size_t i = 0; i < s.length; ++i) {
    const double z = norm[pad + i];
    out.samples[i] = z > 1e-10 ? acc[pad + i] / z : 0.0;
  }
  return out;
}

// Largest deviation of sum_t w^2(n - t*hop) from its mean over fully covered samples.
inline double cola_deviation(const StftConfig& cfg = {}, std::size_t frames = 16) {
  const auto win = cfg.window();
  std::vector<double> sum((frames - 1) * cfg.hop + cfg.nfft, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < cfg.nfft; ++n) sum[t * cfg.hop + n] += win[n] * win[n];
  const std::size_t lo = cfg.nfft - cfg.hop, hi = (frames - 1) * cfg.hop + cfg.hop;
  double mean = 0.0;
  for (std::size_t i = lo; i < hi; ++i) mean += sum[i];
  mean /= static_cast<double>(hi - lo);
  double dev = 0.0;
  for (std::size_t i = lo; i < hi; ++i) dev = std::max(dev, std::abs(sum[i] - mean));
  return dev;
}

// (S^2 / (S^2 + N^2 + eps))^beta, elementwise.
inline Tensor<double> compute_irm(const Tensor<double>& s_mag, const Tensor<double>& n_mag, double beta = 0.5,
                                  double eps = 1e-12) {
  if (s_mag.shape() != n_mag.shape()) {
    throw DimensionError("compute_irm: shape mismatch " + detail::shape_str(s_mag.shape()) + " vs " +
                         detail::shape_str(n_mag.shape()));
  }
  Tensor<double> m(s_mag.shape());
  for (std::size_t i = 0; i < m.numel(); ++i) {
    const double s2 = s_mag[i] * s_mag[i], n2 = n_mag[i] * n_mag[i];
    m[i] = std::pow(s2 / (s2 + n2 + eps), beta);
  }
  return m;
}

inline double mean_power(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

inline double measure_snr_db(const Waveform& clean, const Waveform& interference) {
  return 10.0 * std::log10(mean_power(clean.samples) / mean_power(interference.samples));
}

// Repeats or truncates x to exactly n samples.
inline Waveform fit_length(const Waveform& x, std::size_t n) {
  if (x.samples.empty()) throw DataError("fit_length: empty waveform");
  Waveform out;
  out.sample_rate = x.sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = x.samples[i % x.size()];
  return out;
}

struct MixtureExample {
  std::string id;
  double snr_db = 0.0;
  Waveform clean;
  Waveform interference;  // already scaled to snr_db
  Waveform mixture;
  Spectrogram noisy;
  Tensor<double> noisy_mag;  // [T, F]
  Tensor<double> clean_mag;
  Tensor<double> noise_mag;
  Tensor<double> irm;

  std::size_t frames() const { return noisy.num_frames; }
};

inline void featurize(MixtureExample& ex, const StftConfig& cfg = {}) {
  ex.noisy = stft(ex.mixture, cfg);
  ex.noisy_mag = ex.noisy.magnitude();
  ex.clean_mag = stft(ex.clean, cfg).magnitude();
  ex.noise_mag = stft(ex.interference, cfg).magnitude();
  ex.irm = compute_irm(ex.clean_mag, ex.noise_mag);
}

// Scales noise (looped or cut to the clean length) so the clean-to-noise power
// ratio is snr_db, then mixes and featurizes.
inline MixtureExample mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                                 const StftConfig& cfg = {}) {
  if (clean.sample_rate != noise.sample_rate) {
    throw DataError(detail::concat("mix_at_snr: rates differ (", clean.sample_rate, " vs ", noise.sample_rate, ")"));
  }
  const double pc = mean_power(clean.samples);
  if (!(pc > 0.0)) throw DataError("mix_at_snr: clean signal is silent");
  Waveform n = fit_length(noise, clean.size());
  const double pn = mean_power(n.samples);
  if (!(pn > 0.0)) throw DataError("mix_at_snr: interference is silent");
  const double gain = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  for (auto& v : n.samples) v *= gain;

  MixtureExample ex;
  ex.snr_db = snr_db;
  ex.clean = clean;
  ex.interference = std::move(n);
  ex.mixture.sample_rate = clean.sample_rate;
  ex.mixture.samples.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) ex.mixture.samples[i] = clean.samples[i] + ex.interference.samples[i];
  featurize(ex, cfg);
  return ex;
}

// mask * noisy over the network bins, noisy Nyquist bin kept.
inline Spectrogram apply_mask(const Spectrogram& noisy, const Tensor<double>& mask) {
  const std::size_t f = noisy.nfft / 2;
  if (mask.shape() != Shape{noisy.num_frames, f}) {
    throw DimensionError(detail::concat("reconstruct: mask ", detail::shape_str(mask.shape()), " does not match [",
                                        noisy.num_frames, ",", f, "]"));
  }
  Spectrogram out = noisy;
  for (std::size_t t = 0; t < noisy.num_frames; ++t)
    for (std::size_t k = 0; k < f; ++k) out.at(t, k) *= mask[t * f + k];
  return out;
}

inline Waveform reconstruct(const Spectrogram& noisy, const Tensor<double>& mask, const StftConfig& cfg = {}) {
  return istft(apply_mask(noisy, mask), cfg);
}

}  // namespace uformer
