// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// 16-bit PCM mono RIFF/WAVE reading and writing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "uformer/error.hpp"

namespace uformer {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  void validate() const {
    if (sample_rate <= 0) throw DataError(detail::concat("waveform: sample rate ", sample_rate, " must be positive"));
    for (double s : samples) {
      if (!std::isfinite(s)) throw NumericalError("waveform: non-finite sample");
    }
  }
};

namespace wav_detail {

inline std::uint32_t u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace wav_detail

// Reads a mono 16-bit PCM file. With expected_rate > 0 any other rate is rejected.
inline Waveform read_wav(const std::string& path, int expected_rate = 16000) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open wav file '" + path + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) { return DataError("wav '" + path + "': " + why); };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  int channels = 0, bits = 0, rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = wav_detail::u32(&buf[pos + 4]);
    const unsigned char* body = &buf[pos + 8];
    if (pos + 8 + len > buf.size()) throw fail("truncated chunk");
    if (std::memcmp(&buf[pos], "fmt ", 4) == 0) {
      if (len < 16) throw fail("short fmt chunk");
      const std::uint16_t format = wav_detail::u16(body);
      channels = wav_detail::u16(body + 2);
      rate = static_cast<int>(wav_detail::u32(body + 4));
      bits = wav_detail::u16(body + 14);
      if (format != 1) throw fail(detail::concat("unsupported format tag ", format, " (need PCM)"));
      have_fmt = true;
    } else if (std::memcmp(&buf[pos], "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels != 1) throw fail(detail::concat(channels, " channels, need mono"));
      if (bits != 16) throw fail(detail::concat(bits, "-bit samples, need 16-bit"));
      if (expected_rate > 0 && rate != expected_rate) {
        throw fail(detail::concat("sample rate ", rate, " Hz, need ", expected_rate, " Hz (no resampling)"));
      }
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<std::int16_t>(wav_detail::u16(body + 2 * i)) / 32768.0;
      }
      return w;
    }
    pos += 8 + len + (len & 1);
  }
  throw fail("no data chunk");
}

// Writes 16-bit PCM; samples outside [-1, 1) are clipped.
inline void write_wav(const std::string& path, const Waveform& w) {
  std::string out;
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  out += "RIFF";
  wav_detail::put32(out, 36 + data_len);
  out += "WAVEfmt ";
  wav_detail::put32(out, 16);
  wav_detail::put16(out, 1);
  wav_detail::put16(out, 1);
  wav_detail::put32(out, static_cast<std::uint32_t>(w.sample_rate));
  wav_detail::put32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  wav_detail::put16(out, 2);
  wav_detail::put16(out, 16);
  out += "data";
  wav_detail::put32(out, data_len);
  for (double s : w.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    wav_detail::put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write wav file '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write to '" + path + "'");
}

}  // namespace uformer
