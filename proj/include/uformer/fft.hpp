// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Real DFTs on top of FFTW3. Plans are created once per size and thread;
// FFTW's planner is not reentrant, so planning is serialized.

#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "uformer/error.hpp"

namespace uformer {
namespace fft {
namespace detail {

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct RealPlan {
  std::size_t n = 0;
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;

  explicit RealPlan(std::size_t size) : n(size) {
    std::lock_guard<std::mutex> lock(planner_mutex());
    real = fftw_alloc_real(n);
    spec = fftw_alloc_complex(n / 2 + 1);
    const int ni = static_cast<int>(n);
    forward = fftw_plan_dft_r2c_1d(ni, real, spec, FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(ni, spec, real, FFTW_ESTIMATE);
  }
  RealPlan(const RealPlan&) = delete;
  RealPlan& operator=(const RealPlan&) = delete;
  ~RealPlan() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
    fftw_free(real);
    fftw_free(spec);
  }
};

inline RealPlan& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealPlan>(n);
  return *slot;
}

}  // namespace detail

// X[k] = sum_n x[n] e^{-2 pi i k n / N}, k = 0..N/2. Input shorter than n is zero padded.
inline std::vector<std::complex<double>> rfft(std::span<const double> x, std::size_t n) {
  if (n == 0) throw DimensionError("rfft: size must be positive");
  if (x.size() > n) throw DimensionError(uformer::detail::concat("rfft: input length ", x.size(), " exceeds size ", n));
  auto& p = detail::plan_for(n);
  std::fill(p.real, p.real + n, 0.0);
  std::copy(x.begin(), x.end(), p.real);
  fftw_execute(p.forward);
  std::vector<std::complex<double>> out(n / 2 + 1);
  std::memcpy(static_cast<void*>(out.data()), p.spec, out.size() * sizeof(fftw_complex));
  return out;
}

// Inverse of rfft, including the 1/N factor. Imaginary parts of the DC and
// (even n) Nyquist bins are ignored.
inline std::vector<double> irfft(std::span<const std::complex<double>> spec, std::size_t n) {
  if (spec.size() != n / 2 + 1) {
    throw DimensionError(uformer::detail::concat("irfft: expected ", n / 2 + 1, " bins, got ", spec.size()));
  }
  auto& p = detail::plan_for(n);
  std::memcpy(p.spec, spec.data(), spec.size() * sizeof(fftw_complex));
  fftw_execute(p.inverse);
  std::vector<double> out(p.real, p.real + n);
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= scale;
  return out;
}

}  // namespace fft
}  // namespace uformer
