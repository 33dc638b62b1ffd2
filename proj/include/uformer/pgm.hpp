// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Binary PGM (P5) log-magnitude spectrogram images.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "uformer/tensor.hpp"

namespace uformer {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> pixels;  // row-major, top row first
};

// mag [T, F] -> image of width T and height F. Time runs left to right and
// the lowest bin is the bottom row. Pixels span `range_db` below the peak.
inline GrayImage spectrogram_image(const Tensor<double>& mag, double range_db = 80.0) {
  if (mag.dim() != 2) throw DimensionError("spectrogram image: expected [T, F], got " + detail::shape_str(mag.shape()));
  if (!(range_db > 0.0)) throw ConfigError("spectrogram image: dynamic range must be positive");
  const std::size_t t = mag.shape()[0], f = mag.shape()[1];
  std::vector<double> db(mag.numel());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < db.size(); ++i) {
    db[i] = 20.0 * std::log10(std::abs(mag[i]) + 1e-10);
    top = std::max(top, db[i]);
  }
  GrayImage img{t, f, std::vector<unsigned char>(t * f)};
  for (std::size_t ti = 0; ti < t; ++ti)
    for (std::size_t k = 0; k < f; ++k) {
      const double level = std::clamp((db[ti * f + k] - (top - range_db)) / range_db, 0.0, 1.0);
      img.pixels[(f - 1 - k) * t + ti] = static_cast<unsigned char>(std::lround(level * 255.0));
    }
  return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image '" + path + "'");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path + "'");
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || !in || maxval != 255 || img.width == 0 || img.height == 0) {
    throw DataError("image '" + path + "' is not an 8-bit P5 file");
  }
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw DataError("image '" + path + "' is truncated");
  return img;
}

}  // namespace uformer
