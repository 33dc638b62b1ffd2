// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Run configuration: model, training, STFT and data settings read from a
// line-oriented `key = value` file. `#` starts a comment. Unknown keys and
// malformed values are rejected with the file name and line number.

#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uformer/data.hpp"
#include "uformer/model.hpp"
#include "uformer/signal.hpp"
#include "uformer/train.hpp"

namespace uformer {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  StftConfig stft;
  std::vector<double> snrs{-5.0, 0.0, 5.0};
  SplitFractions split;
  std::size_t fixture_count = 20;
  double fixture_duration = 1.0;  // seconds; 0 draws 1 to 1.5 s per fixture

  // Cross-field checks; model bins always follow the STFT size.
  void validate() const {
    stft.validate();
    model.validate();
    train.validate();
    if (model.bins != stft.bins()) {
      throw ConfigError(detail::concat("config: model bins ", model.bins, " must equal nfft/2 = ", stft.bins()));
    }
    if (snrs.empty()) throw ConfigError("config: snrs must list at least one level");
    if (fixture_count == 0) throw ConfigError("config: fixture_count must be positive");
    if (fixture_duration < 0.0) throw ConfigError("config: fixture_duration must be non-negative");
    split_counts(fixture_count, split);
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

inline std::size_t to_count(const std::string& v) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double to_real(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(out)) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant",
       [](RunConfig& c, const std::string& v) {
         if (v == "fat") c.model.variant = Variant::kFat;
         else if (v == "tf") c.model.variant = Variant::kTf;
         else throw ConfigError("expected fat or tf, got '" + v + "'");
       }},
      {"d_layers",
       [](RunConfig& c, const std::string& v) {
         const auto items = split_list(v);
         if (items.size() != c.model.d_layers.size()) throw ConfigError("expected four comma-separated widths");
         for (std::size_t i = 0; i < items.size(); ++i) c.model.d_layers[i] = to_count(items[i]);
       }},
      {"heads_time", [](RunConfig& c, const std::string& v) { c.model.heads.time = to_count(v); }},
      {"heads_freq", [](RunConfig& c, const std::string& v) { c.model.heads.freq = to_count(v); }},
      {"heads_low", [](RunConfig& c, const std::string& v) { c.model.heads.low_band = to_count(v); }},
      {"heads_high", [](RunConfig& c, const std::string& v) { c.model.heads.high_band = to_count(v); }},
      {"frames", [](RunConfig& c, const std::string& v) { c.model.frames = to_count(v); }},
      {"span", [](RunConfig& c, const std::string& v) { c.model.span = to_count(v); }},
      {"score_scale",
       [](RunConfig& c, const std::string& v) {
         if (v == "length") c.model.scale = ScoreScale::kSequenceLength;
         else if (v == "head_dim") c.model.scale = ScoreScale::kHeadDim;
         else throw ConfigError("expected length or head_dim, got '" + v + "'");
       }},
      {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_real(v); }},
      {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_count(v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_count(v); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_count(v); }},
      {"loss", [](RunConfig& c, const std::string& v) { c.train.loss = parse_loss(v); }},
      {"checkpoint_interval", [](RunConfig& c, const std::string& v) { c.train.checkpoint_interval = to_count(v); }},
      {"clip_norm", [](RunConfig& c, const std::string& v) { c.train.clip_norm = to_real(v); }},
      {"max_steps", [](RunConfig& c, const std::string& v) { c.train.max_steps = to_count(v); }},
      {"nfft",
       [](RunConfig& c, const std::string& v) {
         c.stft.nfft = to_count(v);
         c.model.bins = c.stft.bins();
       }},
      {"hop", [](RunConfig& c, const std::string& v) { c.stft.hop = to_count(v); }},
      {"sample_rate", [](RunConfig& c, const std::string& v) { c.stft.sample_rate = static_cast<int>(to_count(v)); }},
      {"snrs",
       [](RunConfig& c, const std::string& v) {
         c.snrs.clear();
         for (const auto& s : split_list(v)) c.snrs.push_back(to_real(s));
       }},
      {"split",
       [](RunConfig& c, const std::string& v) {
         const auto items = split_list(v);
         if (items.size() != 3) throw ConfigError("expected train,dev,test weights");
         c.split = {to_real(items[0]), to_real(items[1]), to_real(items[2])};
       }},
      {"fixture_count", [](RunConfig& c, const std::string& v) { c.fixture_count = to_count(v); }},
      {"fixture_duration", [](RunConfig& c, const std::string& v) { c.fixture_duration = to_real(v); }},
  };
  return table;
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : config_detail::setters()) keys.push_back(k);
  return keys;
}

// Applies one `key = value` assignment; `where` prefixes error messages.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  const auto& table = config_detail::setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
  try {
    it->second(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + key + ": " + e.what());
  }
}

inline RunConfig parse_config(std::istream& in, const std::string& name) {
  RunConfig cfg;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = detail::concat(name, ":", lineno, ": ");
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    apply_setting(cfg, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)), where);
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

// Renders every key so that parse_config(render_config(c)) == c.
inline std::string render_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  auto list = [](const auto& xs) {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
  };
  o << "variant = " << variant_name(c.model.variant) << '\n'
    << "d_layers = " << list(c.model.d_layers) << '\n'
    << "heads_time = " << c.model.heads.time << '\n'
    << "heads_freq = " << c.model.heads.freq << '\n'
    << "heads_low = " << c.model.heads.low_band << '\n'
    << "heads_high = " << c.model.heads.high_band << '\n'
    << "frames = " << c.model.frames << '\n'
    << "span = " << c.model.span << '\n'
    << "score_scale = " << (c.model.scale == ScoreScale::kSequenceLength ? "length" : "head_dim") << '\n'
    << "lr = " << c.train.lr << '\n'
    << "epochs = " << c.train.epochs << '\n'
    << "batch_size = " << c.train.batch_size << '\n'
    << "seed = " << c.train.seed << '\n'
    << "loss = " << loss_name(c.train.loss) << '\n'
    << "checkpoint_interval = " << c.train.checkpoint_interval << '\n'
    << "clip_norm = " << c.train.clip_norm << '\n'
    << "max_steps = " << c.train.max_steps << '\n'
    << "nfft = " << c.stft.nfft << '\n'
    << "hop = " << c.stft.hop << '\n'
    << "sample_rate = " << c.stft.sample_rate << '\n'
    << "snrs = " << list(c.snrs) << '\n'
    << "split = " << c.split.train << ',' << c.split.dev << ',' << c.split.test << '\n'
    << "fixture_count = " << c.fixture_count << '\n'
    << "fixture_duration = " << c.fixture_duration << '\n';
  return o.str();
}

}  // namespace uformer
