// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "uformer/random.hpp"
#include "uformer/signal.hpp"

namespace uformer {

namespace fs = std::filesystem;

enum class Split { kTrain, kDev, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    default: return "test";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (expected train, dev or test)");
}

// interference_path may end in "@0" or "@1" to select the first or second
// half of the file; without a suffix the whole file is used.
struct ManifestRecord {
  std::string id;
  std::string clean_path;
  std::string interference_path;
  double snr_db = 0.0;
  Split split = Split::kTrain;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(Split s) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(r);
    return out;
  }

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const auto& r) { return r.split == s; }));
  }

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct InterferenceRef {
  std::string path;
  int half = -1;  // -1: whole file
};

inline InterferenceRef parse_interference(const std::string& s) {
  if (s.size() > 2 && s[s.size() - 2] == '@' && (s.back() == '0' || s.back() == '1')) {
    return {s.substr(0, s.size() - 2), s.back() - '0'};
  }
  return {s, -1};
}

inline std::string format_snr(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << "# seed=" << m.seed << '\n';
  for (const auto& r : m.records) {
    out << r.id << '\t' << r.clean_path << '\t' << r.interference_path << '\t' << format_snr(r.snr_db) << '\t'
        << split_name(r.split) << '\n';
  }
}

// Parses and validates: unique ids, five fields per line, referenced files exist
// (relative paths resolve against the manifest's directory).
inline Manifest read_manifest(const std::string& path, bool check_files = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  Manifest m;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# seed=", 0) == 0) m.seed = std::stoull(line.substr(7));
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 5) throw DataError(detail::concat("manifest ", path, ":", lineno, ": expected 5 fields, got ", f.size()));
    ManifestRecord r;
    r.id = f[0];
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };
    r.clean_path = resolve(f[1]);
    const auto ref = parse_interference(f[2]);
    r.interference_path = resolve(ref.path) + (ref.half >= 0 ? "@" + std::to_string(ref.half) : "");
    try {
      r.snr_db = std::stod(f[3]);
      r.split = parse_split(f[4]);
    } catch (const std::exception& e) {
      throw DataError(detail::concat("manifest ", path, ":", lineno, ": ", e.what()));
    }
    if (!ids.insert(r.id).second) throw DataError(detail::concat("manifest ", path, ":", lineno, ": duplicate id '", r.id, "'"));
    if (check_files) {
      for (const auto& p : {r.clean_path, parse_interference(r.interference_path).path}) {
        if (!fs::exists(p)) throw DataError(detail::concat("manifest ", path, ":", lineno, ": missing file '", p, "'"));
      }
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

struct SplitFractions {
  double train = 10.0, dev = 1.0, test = 1.0;
};

struct SplitCounts {
  std::size_t train = 0, dev = 0, test = 0;
};

// Train and dev counts are rounded; test takes the remainder.
inline SplitCounts split_counts(std::size_t n, const SplitFractions& f) {
  const double total = f.train + f.dev + f.test;
  if (!(f.train >= 0 && f.dev >= 0 && f.test >= 0 && total > 0)) throw ConfigError("split fractions must be non-negative with a positive sum");
  SplitCounts c;
  c.train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train / total)));
  c.dev = std::min<std::size_t>(n - c.train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.dev / total)));
  c.test = n - c.train - c.dev;
  return c;
}

inline std::vector<fs::path> list_wavs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: '" + dir + "'");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no .wav files in '" + dir + "'");
  return out;
}

// Pairs each clean utterance with an interference clip and an SNR. Training
// mixtures draw from the first half of each interference file, dev and test
// from the second half.
inline Manifest scan_dataset(const std::string& clean_dir, const std::string& noise_dir, const std::vector<double>& snrs,
                             const SplitFractions& fracs, std::uint64_t seed) {
  if (snrs.empty()) throw ConfigError("scan_dataset: no SNR levels given");
  auto clean = list_wavs(clean_dir);
  const auto noise = list_wavs(noise_dir);
  for (const auto& p : clean) read_wav(p.string());
  for (const auto& p : noise) read_wav(p.string());
  Rng rng(seed);
  rng.shuffle(clean);
  const auto counts = split_counts(clean.size(), fracs);
  Manifest m;
  m.seed = seed;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    ManifestRecord r;
    r.split = i < counts.train ? Split::kTrain : i < counts.train + counts.dev ? Split::kDev : Split::kTest;
    r.id = clean[i].stem().string();
    if (!ids.insert(r.id).second) throw DataError("scan_dataset: duplicate utterance id '" + r.id + "'");
    r.clean_path = fs::absolute(clean[i]).string();
    const auto& n = noise[rng.below(noise.size())];
    r.interference_path = fs::absolute(n).string() + (r.split == Split::kTrain ? "@0" : "@1");
    r.snr_db = snrs[rng.below(snrs.size())];
    m.records.push_back(std::move(r));
  }
  std::sort(m.records.begin(), m.records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return m;
}

inline Waveform load_interference(const InterferenceRef& ref, int rate) {
  Waveform w = read_wav(ref.path, rate);
  if (ref.half < 0) return w;
  const std::size_t mid = w.size() / 2;
  if (mid == 0) throw DataError("interference file '" + ref.path + "' too short to split");
  Waveform h;
  h.sample_rate = w.sample_rate;
  if (ref.half == 0) h.samples.assign(w.samples.begin(), w.samples.begin() + static_cast<long>(mid));
  else h.samples.assign(w.samples.begin() + static_cast<long>(mid), w.samples.end());
  return h;
}

inline MixtureExample load_example(const ManifestRecord& r, const StftConfig& cfg = {}) {
  const Waveform clean = read_wav(r.clean_path, cfg.sample_rate);
  const Waveform noise = load_interference(parse_interference(r.interference_path), cfg.sample_rate);
  MixtureExample ex = mix_at_snr(clean, noise, r.snr_db, cfg);
  ex.id = r.id;
  return ex;
}

enum class FixtureKind { kSineMix, kChirpMix, kMultitoneMix };

inline const char* fixture_name(FixtureKind k) {
  switch (k) {
    case FixtureKind::kSineMix: return "sine_mix";
    case FixtureKind::kChirpMix: return "chirp_mix";
    default: return "multitone_mix";
  }
}

inline FixtureKind parse_fixture(const std::string& s) {
  if (s == "sine_mix") return FixtureKind::kSineMix;
  if (s == "chirp_mix") return FixtureKind::kChirpMix;
  if (s == "multitone_mix") return FixtureKind::kMultitoneMix;
  throw ConfigError("unknown fixture kind '" + s + "'");
}

struct FixtureSignals {
  Waveform clean;
  Waveform noise;
};

// Tonal clean signal below 3.5 kHz with a slow amplitude envelope, and seeded
// white noise. Duration is 1 to 1.5 s unless given.
inline FixtureSignals synth_signals(FixtureKind kind, std::uint64_t seed, double duration_s = 0.0) {
  Rng rng(derive_seed(seed, 0));
  Rng noise_rng(derive_seed(seed, 1));
  constexpr int fs = 16000;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (duration_s <= 0.0) duration_s = 1.0 + 0.5 * rng.uniform();
  const std::size_t n = static_cast<std::size_t>(std::lround(duration_s * fs));
  FixtureSignals out;
  out.clean.sample_rate = out.noise.sample_rate = fs;
  out.clean.samples.assign(n, 0.0);

  const double rate = 3.0 + 2.0 * rng.uniform();  // syllable rate, Hz
  const double env_phase = two_pi * rng.uniform();
  auto envelope = [&](double t) { return 0.1 + 0.9 * (0.5 - 0.5 * std::cos(two_pi * rate * t + env_phase)); };
  auto& x = out.clean.samples;
  switch (kind) {
    case FixtureKind::kSineMix: {
      const double f0 = 140.0 + 80.0 * rng.uniform();
      std::vector<double> phase;
      for (int k = 1; k * f0 < 3500.0; ++k) phase.push_back(two_pi * rng.uniform());
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        double v = 0.0;
        for (std::size_t k = 0; k < phase.size(); ++k) v += std::sin(two_pi * f0 * double(k + 1) * t + phase[k]) / double(k + 1);
        x[i] = envelope(t) * v;
      }
      break;
    }
    case FixtureKind::kChirpMix: {
      const double up0 = 300.0 + 200.0 * rng.uniform(), up1 = 1800.0 + 400.0 * rng.uniform();
      const double dn0 = 3000.0 + 300.0 * rng.uniform(), dn1 = 700.0 + 300.0 * rng.uniform();
      const double p0 = two_pi * rng.uniform(), p1 = two_pi * rng.uniform();
      const double dur = static_cast<double>(n) / fs;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        const double a = two_pi * (up0 * t + 0.5 * (up1 - up0) / dur * t * t) + p0;
        const double b = two_pi * (dn0 * t + 0.5 * (dn1 - dn0) / dur * t * t) + p1;
        x[i] = envelope(t) * (std::sin(a) + 0.6 * std::sin(b));
      }
      break;
    }
    case FixtureKind::kMultitoneMix: {
      std::vector<double> freq(5), amp(5), phase(5);
      for (std::size_t k = 0; k < 5; ++k) {
        freq[k] = 200.0 + 3200.0 * rng.uniform();
        amp[k] = 0.3 + 0.7 * rng.uniform();
        phase[k] = two_pi * rng.uniform();
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        double v = 0.0;
        for (std::size_t k = 0; k < 5; ++k) v += amp[k] * std::sin(two_pi * freq[k] * t + phase[k]);
        x[i] = envelope(t) * v;
      }
      break;
    }
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  for (auto& v : x) v *= 0.5 / peak;
  out.noise.samples.resize(n);
  for (auto& v : out.noise.samples) v = 0.25 * noise_rng.normal();
  return out;
}

inline MixtureExample synth_fixture(FixtureKind kind, std::uint64_t seed, double snr_db = 0.0, double duration_s = 0.0,
                                    const StftConfig& cfg = {}) {
  const auto sig = synth_signals(kind, seed, duration_s);
  MixtureExample ex = mix_at_snr(sig.clean, sig.noise, snr_db, cfg);
  ex.id = detail::concat(fixture_name(kind), "_", seed);
  return ex;
}

// Writes count fixtures (cycling through the kinds) as WAV pairs plus a
// manifest.tsv into dir and returns the manifest.
inline Manifest write_fixture_set(const std::string& dir, std::size_t count, std::uint64_t seed,
                                  const std::vector<double>& snrs, const SplitFractions& fracs, double duration_s = 0.0) {
  if (count == 0) throw ConfigError("fixture set: count must be positive");
  if (snrs.empty()) throw ConfigError("fixture set: no SNR levels given");
  fs::create_directories(dir);
  const auto counts = split_counts(count, fracs);
  Manifest m;
  m.seed = seed;
  Rng rng(derive_seed(seed, 7));
  for (std::size_t i = 0; i < count; ++i) {
    const auto kind = static_cast<FixtureKind>(i % 3);
    const std::uint64_t fseed = derive_seed(seed, 100 + i);
    const auto sig = synth_signals(kind, fseed, duration_s);
    ManifestRecord r;
    r.id = detail::concat("fx", i < 10 ? "00" : i < 100 ? "0" : "", i, "_", fixture_name(kind));
    r.clean_path = r.id + "_clean.wav";
    r.interference_path = r.id + "_noise.wav";
    write_wav((fs::path(dir) / r.clean_path).string(), sig.clean);
    write_wav((fs::path(dir) / r.interference_path).string(), sig.noise);
    r.snr_db = snrs[rng.below(snrs.size())];
    r.split = i < counts.train ? Split::kTrain : i < counts.train + counts.dev ? Split::kDev : Split::kTest;
    m.records.push_back(std::move(r));
  }
  write_manifest((fs::path(dir) / "manifest.tsv").string(), m);
  return read_manifest((fs::path(dir) / "manifest.tsv").string());
}

// One L-frame training window. Rows at and after `valid` are zero padding.
struct Segment {
  std::string id;
  std::size_t start = 0;
  std::size_t valid = 0;
  Tensor<double> noisy_mag;  // [L, F]
  Tensor<double> clean_mag;
  Tensor<double> irm;
};

inline std::vector<Segment> segment(const MixtureExample& ex, std::size_t frames_per_segment) {
  if (frames_per_segment == 0) throw ConfigError("segment: L must be positive");
  const std::size_t t = ex.noisy_mag.shape()[0], f = ex.noisy_mag.shape()[1];
  if (t == 0) throw DataError("segment: spectrogram has no frames");
  std::vector<Segment> out;
  for (std::size_t start = 0; start < t; start += frames_per_segment) {
    Segment s;
    s.id = ex.id;
    s.start = start;
    s.valid = std::min(frames_per_segment, t - start);
    auto cut = [&](const Tensor<double>& src) {
      Tensor<double> dst({frames_per_segment, f});
      std::copy(src.data().begin() + static_cast<long>(start * f),
                src.data().begin() + static_cast<long>((start + s.valid) * f), dst.data().begin());
      return dst;
    };
    s.noisy_mag = cut(ex.noisy_mag);
    s.clean_mag = cut(ex.clean_mag);
    s.irm = cut(ex.irm);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace uformer
