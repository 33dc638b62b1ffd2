// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Objective measures: frequency-weighted segmental SNR (Loizou's comp_fwseg
// lineage: 25 critical bands, gamma = 0.2) and STOI (Taal et al., computed at
// 10 kHz as in the reference implementation).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "uformer/fft.hpp"
#include "uformer/wav.hpp"

namespace uformer {

namespace metrics_detail {

constexpr double kEps = std::numeric_limits<double>::epsilon();

constexpr std::array<double, 25> kCenter = {
    50.0,    120.0,   190.0,   260.0,   330.0,   400.0,   470.0,   540.0,   617.372, 703.378, 798.717, 904.128, 1020.38,
    1148.30, 1288.72, 1442.54, 1610.70, 1794.16, 1993.93, 2211.08, 2446.71, 2701.97, 2978.04, 3276.17, 3597.63};
constexpr std::array<double, 25> kBandwidth = {
    70.0,    70.0,    70.0,    70.0,    70.0,    70.0,    70.0,    77.3724, 86.0056, 95.3398, 105.411, 116.256, 127.914,
    140.423, 153.823, 168.154, 183.457, 199.776, 217.153, 235.631, 255.255, 276.072, 298.126, 321.465, 346.136};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// numpy.hanning(n + 2)[1:-1]
inline std::vector<double> inner_hanning(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i + 1) / static_cast<double>(n + 1));
  }
  return w;
}

inline double norm2(const double* x, std::size_t n, std::size_t stride = 1) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i * stride] * x[i * stride];
  return std::sqrt(s);
}

}  // namespace metrics_detail

// Per-band clamped frequency-weighted segmental SNR in dB.
inline double fwsnrseg(const Waveform& clean, const Waveform& test) {
  using namespace metrics_detail;
  if (clean.size() != test.size()) {
    throw DimensionError(detail::concat("fwsnrseg: length mismatch ", clean.size(), " vs ", test.size()));
  }
  if (clean.sample_rate != test.sample_rate) throw DataError("fwsnrseg: sample rates differ");
  const double fs = clean.sample_rate;
  const std::size_t win = static_cast<std::size_t>(std::lround(30.0 * fs / 1000.0));
  const std::size_t skip = win / 4;
  const std::size_t n_fft = next_pow2(2 * win), half = n_fft / 2;
  const std::size_t n = clean.size();
  if (n < win + skip) throw DataError(detail::concat("fwsnrseg: need at least ", win + skip, " samples, got ", n));
  const double max_freq = fs / 2.0;
  constexpr double gamma = 0.2;

  const double min_factor = std::exp(-30.0 / (2.0 * 2.303));
  std::vector<std::vector<double>> filters(kCenter.size(), std::vector<double>(half));
  for (std::size_t b = 0; b < kCenter.size(); ++b) {
    const double f0 = std::floor(kCenter[b] / max_freq * static_cast<double>(half));
    const double bw = kBandwidth[b] / max_freq * static_cast<double>(half);
    const double norm = std::log(kBandwidth[0]) - std::log(kBandwidth[b]);
    for (std::size_t j = 0; j < half; ++j) {
      const double r = (static_cast<double>(j) - f0) / bw;
      const double v = std::exp(-11.0 * r * r + norm);
      filters[b][j] = v > min_factor ? v : 0.0;
    }
  }

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i + 1) / static_cast<double>(win + 1)));
  }

  const std::size_t frames = n / skip - win / skip;
  std::vector<double> cf(win), tf(win);
  double total = 0.0;
  for (std::size_t m = 0; m < frames; ++m) {
    const std::size_t start = m * skip;
    for (std::size_t i = 0; i < win; ++i) {
      cf[i] = (clean.samples[start + i] + kEps) * window[i];
      tf[i] = (test.samples[start + i] + kEps) * window[i];
    }
    const auto cs = fft::rfft(cf, n_fft);
    const auto ts = fft::rfft(tf, n_fft);
    std::vector<double> cmag(half), tmag(half);
    double csum = 0.0, tsum = 0.0;
    for (std::size_t j = 0; j < half; ++j) {
      csum += cmag[j] = std::abs(cs[j]);
      tsum += tmag[j] = std::abs(ts[j]);
    }
    if (csum > 0.0)
      for (auto& v : cmag) v /= csum;
    if (tsum > 0.0)
      for (auto& v : tmag) v /= tsum;
    double num = 0.0, den = 0.0;
    for (std::size_t b = 0; b < kCenter.size(); ++b) {
      double ce = 0.0, te = 0.0;
      for (std::size_t j = 0; j < half; ++j) {
        ce += cmag[j] * filters[b][j];
        te += tmag[j] * filters[b][j];
      }
      // Identical band energies are an infinite SNR, so they take the upper clamp
      // even in near-silent bands where the eps floor would dominate.
      const double diff2 = (ce - te) * (ce - te);
      const double snr = diff2 == 0.0 ? 35.0 : std::clamp(10.0 * std::log10(ce * ce / std::max(diff2, kEps)), -10.0, 35.0);
      const double weight = std::pow(ce, gamma);
      num += weight * snr;
      den += weight;
    }
    total += den > 0.0 ? num / den : -10.0;
  }
  return total / static_cast<double>(frames);
}

// Polyphase rational resampling by up/down with a Kaiser-windowed sinc
// (beta 5, half length 10 * max(up, down) input-rate taps), zero phase.
inline std::vector<double> resample_poly(const std::vector<double>& x, std::size_t up, std::size_t down) {
  const std::size_t g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return x;
  const std::size_t max_rate = std::max(up, down);
  const std::size_t half_len = 10 * max_rate;
  const std::size_t taps = 2 * half_len + 1;
  const double cutoff = 1.0 / static_cast<double>(max_rate);
  constexpr double beta = 5.0;
  std::vector<double> h(taps);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double t = static_cast<double>(i) - static_cast<double>(half_len);
    const double arg = cutoff * t;
    const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double r = 2.0 * static_cast<double>(i) / static_cast<double>(taps - 1) - 1.0;
    const double kaiser = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / std::cyl_bessel_i(0.0, beta);
    sum += h[i] = cutoff * sinc * kaiser;
  }
  for (auto& v : h) v *= static_cast<double>(up) / sum;

  const std::size_t out_len = (x.size() * up + down - 1) / down;
  std::vector<double> y(out_len, 0.0);
  for (std::size_t m = 0; m < out_len; ++m) {
    // Upsampled index u = m * down; taps h[u - k*up + half_len].
    const long u = static_cast<long>(m * down);
    const long kmin = std::max(0L, (u - static_cast<long>(half_len) + static_cast<long>(up) - 1) / static_cast<long>(up));
    const long kmax = std::min(static_cast<long>(x.size()) - 1, (u + static_cast<long>(half_len)) / static_cast<long>(up));
    double acc = 0.0;
    for (long k = kmin; k <= kmax; ++k) acc += x[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(u - k * static_cast<long>(up) + static_cast<long>(half_len))];
    y[m] = acc;
  }
  return y;
}

namespace metrics_detail {

constexpr int kStoiRate = 10000;
constexpr std::size_t kStoiFrame = 256;
constexpr std::size_t kStoiFft = 512;
constexpr std::size_t kStoiBands = 15;
constexpr double kStoiMinFreq = 150.0;
constexpr std::size_t kStoiSegment = 30;
constexpr double kStoiBeta = -15.0;
constexpr double kStoiDynRange = 40.0;

// Drops frames more than dyn_range dB below the loudest clean frame, then overlap-adds.
inline void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const std::size_t len = kStoiFrame, hop = kStoiFrame / 2;
  const auto w = inner_hanning(len);
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i + len < x.size(); i += hop) starts.push_back(i);
  std::vector<double> energy(starts.size());
  std::vector<double> frame(len);
  for (std::size_t f = 0; f < starts.size(); ++f) {
    for (std::size_t n = 0; n < len; ++n) frame[n] = w[n] * x[starts[f] + n];
    energy[f] = 20.0 * std::log10(norm2(frame.data(), len) + kEps);
  }
  const double top = energy.empty() ? 0.0 : *std::max_element(energy.begin(), energy.end());
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < starts.size(); ++f) {
    if (top - kStoiDynRange - energy[f] < 0.0) keep.push_back(starts[f]);
  }
  std::vector<double> xs, ys;
  if (!keep.empty()) {
    xs.assign((keep.size() - 1) * hop + len, 0.0);
    ys.assign(xs.size(), 0.0);
    for (std::size_t f = 0; f < keep.size(); ++f)
      for (std::size_t n = 0; n < len; ++n) {
        xs[f * hop + n] += w[n] * x[keep[f] + n];
        ys[f * hop + n] += w[n] * y[keep[f] + n];
      }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// One-third-octave band envelopes [bands][frames]: sqrt(sum over band bins of |X|^2).
inline std::vector<std::vector<double>> third_octave_envelopes(const std::vector<double>& x) {
  const std::size_t bins = kStoiFft / 2 + 1;
  std::vector<std::pair<std::size_t, std::size_t>> edges(kStoiBands);
  for (std::size_t b = 0; b < kStoiBands; ++b) {
    const double k = static_cast<double>(b);
    const double lo = kStoiMinFreq * std::pow(2.0, (2.0 * k - 1.0) / 6.0);
    const double hi = kStoiMinFreq * std::pow(2.0, (2.0 * k + 1.0) / 6.0);
    auto nearest = [&](double f) {
      std::size_t best = 0;
      double dist = 1e300;
      for (std::size_t j = 0; j < bins; ++j) {
        const double fj = static_cast<double>(j) * kStoiRate / static_cast<double>(kStoiFft);
        const double d = (fj - f) * (fj - f);
        if (d < dist) {
          dist = d;
          best = j;
        }
      }
      return best;
    };
    edges[b] = {nearest(lo), nearest(hi)};
  }
  const auto w = inner_hanning(kStoiFrame);
  const std::size_t hop = kStoiFrame / 2;
  std::vector<std::vector<double>> env(kStoiBands);
  std::vector<double> frame(kStoiFrame);
  for (std::size_t i = 0; i + kStoiFrame < x.size(); i += hop) {
    for (std::size_t n = 0; n < kStoiFrame; ++n) frame[n] = w[n] * x[i + n];
    const auto spec = fft::rfft(frame, kStoiFft);
    for (std::size_t b = 0; b < kStoiBands; ++b) {
      double e = 0.0;
      for (std::size_t j = edges[b].first; j < edges[b].second; ++j) e += std::norm(spec[j]);
      env[b].push_back(std::sqrt(e));
    }
  }
  return env;
}

}  // namespace metrics_detail

// Short-time objective intelligibility in [0, 1] (clipped correlations can
// in principle go negative for adversarial inputs; the result is clamped).
inline double stoi(const Waveform& clean, const Waveform& test) {
  using namespace metrics_detail;
  if (clean.size() != test.size()) {
    throw DimensionError(detail::concat("stoi: length mismatch ", clean.size(), " vs ", test.size()));
  }
  if (clean.sample_rate != test.sample_rate) throw DataError("stoi: sample rates differ");
  const double min_seconds = 0.384;
  if (clean.duration() < min_seconds) {
    throw DataError(detail::concat("stoi: need at least 384 ms of signal, got ", clean.size(), " samples"));
  }
  std::vector<double> x = resample_poly(clean.samples, kStoiRate, static_cast<std::size_t>(clean.sample_rate));
  std::vector<double> y = resample_poly(test.samples, kStoiRate, static_cast<std::size_t>(clean.sample_rate));
  remove_silent_frames(x, y);
  const auto xe = third_octave_envelopes(x);
  const auto ye = third_octave_envelopes(y);
  const std::size_t frames = xe[0].size();
  if (frames < kStoiSegment) {
    throw DataError(detail::concat("stoi: only ", frames, " non-silent frames, need ", kStoiSegment));
  }
  const double clip = std::pow(10.0, -kStoiBeta / 20.0);
  const std::size_t segments = frames - kStoiSegment + 1;
  double total = 0.0;
  std::vector<double> xs(kStoiSegment), ys(kStoiSegment);
  for (std::size_t m = 0; m < segments; ++m) {
    for (std::size_t b = 0; b < kStoiBands; ++b) {
      for (std::size_t n = 0; n < kStoiSegment; ++n) {
        xs[n] = xe[b][m + n];
        ys[n] = ye[b][m + n];
      }
      const double alpha = norm2(xs.data(), kStoiSegment) / (norm2(ys.data(), kStoiSegment) + kEps);
      for (std::size_t n = 0; n < kStoiSegment; ++n) ys[n] = std::min(ys[n] * alpha, xs[n] * (1.0 + clip));
      const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / kStoiSegment;
      const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / kStoiSegment;
      for (std::size_t n = 0; n < kStoiSegment; ++n) {
        xs[n] -= mx;
        ys[n] -= my;
      }
      const double nx = norm2(xs.data(), kStoiSegment) + kEps, ny = norm2(ys.data(), kStoiSegment) + kEps;
      double corr = 0.0;
      for (std::size_t n = 0; n < kStoiSegment; ++n) corr += (xs[n] / nx) * (ys[n] / ny);
      total += corr;
    }
  }
  return std::clamp(total / static_cast<double>(kStoiBands * segments), 0.0, 1.0);
}

struct MetricScores {
  double stoi = 0.0;
  double fwsnrseg = 0.0;
};

inline MetricScores score(const Waveform& clean, const Waveform& test) {
  return {stoi(clean, test), fwsnrseg(clean, test)};
}

struct MetricRow {
  std::string utterance_id;
  double snr_db = 0.0;
  MetricScores enhanced;
  MetricScores unprocessed;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  MetricScores mean_enhanced() const { return mean(&MetricRow::enhanced); }
  MetricScores mean_unprocessed() const { return mean(&MetricRow::unprocessed); }

 private:
  MetricScores mean(MetricScores MetricRow::*field) const {
    MetricScores m;
    for (const auto& r : rows) {
      m.stoi += (r.*field).stoi;
      m.fwsnrseg += (r.*field).fwsnrseg;
    }
    if (!rows.empty()) {
      m.stoi /= static_cast<double>(rows.size());
      m.fwsnrseg /= static_cast<double>(rows.size());
    }
    return m;
  }
};

}  // namespace uformer
