// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Command-line front end: train, enhance, evaluate, verify and spectrogram.
// run_cli never calls exit(), so tests can drive it in-process.

#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "uformer/checkpoint.hpp"
#include "uformer/config.hpp"
#include "uformer/data.hpp"
#include "uformer/pgm.hpp"
#include "uformer/train.hpp"
#include "uformer/verify.hpp"

namespace uformer {

// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,    // verify failure or unexpected error
  kExitConfig = 2,     // bad flags, config file or shapes
  kExitData = 3,       // missing or malformed input files
  kExitNumerical = 4,  // non-finite loss or samples
};

inline constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  verify reported a failing check, or an unexpected error\n"
    "  2  configuration error (flags, config file, shapes)\n"
    "  3  data error (missing, corrupt or mismatched files)\n"
    "  4  numerical abort (non-finite loss or samples)\n"
    "Environment:\n"
    "  UFORMER_THREADS  caps evaluation worker threads\n";

namespace cli_detail {

namespace fs = std::filesystem;
using Model = UTransformer<float>;

struct TrainArgs {
  std::string config, out, manifest, clean_dir, noise_dir, resume;
  bool fixtures = false;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

struct EnhanceArgs {
  std::string checkpoint, in, out, spectrogram_dir, mask = "model";
};

struct EvaluateArgs {
  std::string checkpoint, manifest, split = "test", out, mask = "model";
};

struct VerifyArgs {
  std::string fault;
  bool list = false;
};

struct SpectrogramArgs {
  std::string in, out;
  std::size_t nfft = 512, hop = 256;
  double range_db = 80.0;
};

inline RunConfig build_config(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set '" + s + "': expected key=value");
    apply_setting(cfg, config_detail::trim(s.substr(0, eq)), config_detail::trim(s.substr(eq + 1)), "--set: ");
  }
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();
  return cfg;
}

// Manifest for the run with absolute paths, so the copy in --out stands alone.
inline Manifest gather_data(const TrainArgs& a, const RunConfig& cfg) {
  const int sources = int(a.fixtures) + int(!a.manifest.empty()) + int(!a.clean_dir.empty() || !a.noise_dir.empty());
  if (sources != 1) throw ConfigError("train: give exactly one of --fixtures, --manifest or --clean-dir/--noise-dir");
  Manifest m;
  if (a.fixtures) {
    m = write_fixture_set((fs::path(a.out) / "fixtures").string(), cfg.fixture_count, cfg.train.seed, cfg.snrs, cfg.split,
                          cfg.fixture_duration);
  } else if (!a.manifest.empty()) {
    m = read_manifest(a.manifest);
  } else {
    if (a.clean_dir.empty() || a.noise_dir.empty()) throw ConfigError("train: --clean-dir and --noise-dir go together");
    m = scan_dataset(a.clean_dir, a.noise_dir, cfg.snrs, cfg.split, cfg.train.seed);
  }
  for (auto& r : m.records) {
    r.clean_path = fs::absolute(r.clean_path).string();
    const auto ref = parse_interference(r.interference_path);
    r.interference_path = fs::absolute(ref.path).string() + (ref.half >= 0 ? "@" + std::to_string(ref.half) : "");
  }
  return m;
}

inline std::string fmt_loss(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = build_config(a);
  fs::create_directories(a.out);
  const Manifest manifest = gather_data(a, cfg);
  write_manifest((fs::path(a.out) / "manifest.tsv").string(), manifest);
  {
    std::ofstream rc(fs::path(a.out) / "run.cfg", std::ios::binary);
    if (!rc) throw DataError("cannot write '" + (fs::path(a.out) / "run.cfg").string() + "'");
    rc << render_config(cfg);
  }

  const auto train_ex = load_split(manifest, Split::kTrain, cfg.stft);
  std::vector<MixtureExample> dev_ex;
  if (manifest.count(Split::kDev) > 0) dev_ex = load_split(manifest, Split::kDev, cfg.stft);
  const auto train = prepare_all<float>(segment_all(train_ex, cfg.model.frames));
  const auto dev = prepare_all<float>(segment_all(dev_ex, cfg.model.frames));
  out << "train: " << train_ex.size() << " utterances (" << train.size() << " segments), dev: " << dev_ex.size()
      << " utterances (" << dev.size() << " segments)\n";

  Model model = init_params<float>(cfg.model, cfg.train.seed);
  TrainState<float> state;
  const std::string ckpt_path = (fs::path(a.out) / "checkpoint.bin").string();
  const std::string history_path = (fs::path(a.out) / "history.csv").string();
  std::vector<HistoryRow> history;
  if (!a.resume.empty()) {
    const Checkpoint c = load_checkpoint(a.resume);
    if (!(c.model == cfg.model)) throw ConfigError("--resume: checkpoint '" + a.resume + "' was trained with a different model config");
    restore(c, model, state);
    if (fs::exists(history_path)) {
      for (const auto& r : read_history_csv(history_path))
        if (r.step <= state.step) history.push_back(r);
    }
    out << "resumed at epoch " << state.epoch << ", step " << state.step << "\n";
  }

  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  TrainHooks<float> hooks;
  hooks.on_step = [&](const TrainState<float>&, const HistoryRow& row) {
    history.push_back(row);
    epoch_sum += row.train_loss;
    ++epoch_steps;
  };
  hooks.on_epoch = [&](const TrainState<float>& s, double dev_loss) {
    out << "epoch " << s.epoch << "/" << cfg.train.epochs << "  step " << s.step
        << "  train_loss " << fmt_loss(epoch_steps ? epoch_sum / double(epoch_steps) : std::nan(""))
        << "  dev_loss " << fmt_loss(dev_loss) << std::endl;
    epoch_sum = 0.0;
    epoch_steps = 0;
  };
  hooks.checkpoint = [&](const TrainState<float>& s) {
    save_checkpoint(ckpt_path, model, s, cfg.train, cfg.stft);
    write_history_csv(history_path, history);
  };
  try {
    train_loop(model, train, dev, cfg.train, state, hooks);
  } catch (const NumericalError&) {
    write_history_csv(history_path, history);
    throw;
  }
  save_checkpoint(ckpt_path, model, state, cfg.train, cfg.stft);
  write_history_csv(history_path, history);
  out << "wrote " << ckpt_path << " and " << history_path << " (" << history.size() << " steps)\n";
  return kExitOk;
}

inline int cmd_enhance(const EnhanceArgs& a, std::ostream& out) {
  if (a.mask != "model" && a.mask != "ones") throw ConfigError("enhance: --mask must be model or ones");
  StftConfig stft;
  std::optional<Model> model;
  if (!a.checkpoint.empty()) {
    const Checkpoint c = load_checkpoint(a.checkpoint);
    stft = c.stft;
    if (a.mask == "model") model.emplace(model_from_checkpoint<float>(c));
  } else if (a.mask == "model") {
    throw ConfigError("enhance: --checkpoint is required unless --mask ones");
  }
  const Waveform in = read_wav(a.in, stft.sample_rate);
  const Spectrogram noisy = uformer::stft(in, stft);
  const Tensor<double> mag = noisy.magnitude();
  const Tensor<double> mask = model ? predict_mask(*model, mag) : Tensor<double>::ones(mag.shape());
  const Spectrogram enhanced = apply_mask(noisy, mask);
  Waveform y = istft(enhanced, stft);
  y.validate();
  write_wav(a.out, y);
  out << "wrote " << a.out << " (" << y.size() << " samples, " << noisy.num_frames << " frames)\n";
  if (!a.spectrogram_dir.empty()) {
    fs::create_directories(a.spectrogram_dir);
    const auto noisy_pgm = (fs::path(a.spectrogram_dir) / "noisy.pgm").string();
    const auto enh_pgm = (fs::path(a.spectrogram_dir) / "enhanced.pgm").string();
    write_pgm(noisy_pgm, spectrogram_image(mag));
    write_pgm(enh_pgm, spectrogram_image(enhanced.magnitude()));
    out << "wrote " << noisy_pgm << " and " << enh_pgm << " (" << mag.shape()[0] << " x " << mag.shape()[1] << ")\n";
  }
  return kExitOk;
}

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.mask != "model" && a.mask != "ones" && a.mask != "oracle") {
    throw ConfigError("evaluate: --mask must be model, ones or oracle");
  }
  StftConfig stft;
  std::optional<Model> model;
  if (!a.checkpoint.empty()) {
    const Checkpoint c = load_checkpoint(a.checkpoint);
    stft = c.stft;
    if (a.mask == "model") model.emplace(model_from_checkpoint<float>(c));
  } else if (a.mask == "model") {
    throw ConfigError("evaluate: --checkpoint is required unless --mask ones or oracle");
  }
  const Split split = [&] {
    try {
      return parse_split(a.split);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("evaluate: --split: ") + e.what());
    }
  }();
  const auto examples = load_split(read_manifest(a.manifest), split, stft);
  const MaskFn fn = model ? model_mask(*model) : a.mask == "oracle" ? oracle_irm_mask() : identity_mask();
  const MetricReport report = evaluate(examples, fn, stft);
  if (!a.out.empty()) write_metrics_csv(a.out, report);

  out << std::fixed;
  out << std::left << std::setw(28) << "utterance" << std::right << std::setw(8) << "snr_db" << std::setw(10) << "STOI%"
      << std::setw(11) << "fwSNRseg" << std::setw(14) << "unproc_STOI%" << std::setw(14) << "unproc_fwSNR" << '\n';
  auto line = [&](const std::string& id, const std::string& snr, const MetricScores& e, const MetricScores& u) {
    out << std::left << std::setw(28) << id << std::right << std::setw(8) << snr << std::setprecision(2) << std::setw(10)
        << 100.0 * e.stoi << std::setw(11) << e.fwsnrseg << std::setw(14) << 100.0 * u.stoi << std::setw(14) << u.fwsnrseg
        << '\n';
  };
  for (const auto& r : report.rows) line(r.utterance_id, format_snr(r.snr_db), r.enhanced, r.unprocessed);
  line("mean", "", report.mean_enhanced(), report.mean_unprocessed());
  out << std::defaultfloat;
  if (!a.out.empty()) out << "wrote " << a.out << '\n';
  return kExitOk;
}

inline int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  if (a.list) {
    for (const auto& c : verify_checks()) out << std::left << std::setw(24) << c.name << c.description << '\n';
    return kExitOk;
  }
  if (!a.fault.empty() && a.fault != kFaultRelTableGrad) {
    throw ConfigError("verify: unknown fault '" + a.fault + "' (known: " + kFaultRelTableGrad + ")");
  }
  if (!a.fault.empty()) out << "injecting fault '" << a.fault << "'\n";
  const auto results = run_verify(VerifyOptions{a.fault});
  std::size_t failed = 0;
  double total = 0.0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name << std::right << std::fixed
        << std::setprecision(2) << std::setw(7) << r.seconds << "s  " << std::defaultfloat << r.detail << '\n';
    failed += r.passed ? 0 : 1;
    total += r.seconds;
  }
  out << (failed ? "verify: FAILED " : "verify: all ") << (failed ? failed : results.size()) << " of " << results.size()
      << (failed ? " checks failed" : " checks passed") << " in " << std::fixed << std::setprecision(1) << total << "s\n"
      << std::defaultfloat;
  return failed ? kExitFailure : kExitOk;
}

inline int cmd_spectrogram(const SpectrogramArgs& a, std::ostream& out) {
  StftConfig stft;
  stft.nfft = a.nfft;
  stft.hop = a.hop;
  stft.validate();
  const Waveform w = read_wav(a.in, stft.sample_rate);
  const Tensor<double> mag = uformer::stft(w, stft).magnitude();
  write_pgm(a.out, spectrogram_image(mag, a.range_db));
  out << "wrote " << a.out << " (" << mag.shape()[0] << " x " << mag.shape()[1] << ")\n";
  return kExitOk;
}

}  // namespace cli_detail

// Parses argv and runs one subcommand; returns an ExitCode.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"uformer: U-Transformer speech enhancement with axial and frequency-band attention", "uformer"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint.bin, history.csv, run.cfg and manifest.tsv");
  train->add_option("--config", ta.config, "key = value config file (defaults apply when omitted)");
  train->add_flag("--fixtures", ta.fixtures, "Synthesize fixture_count fixtures into OUT/fixtures and train on them");
  train->add_option("--manifest", ta.manifest, "Train from an existing manifest.tsv");
  train->add_option("--clean-dir", ta.clean_dir, "Directory of clean speech WAVs");
  train->add_option("--noise-dir", ta.noise_dir, "Directory of interference WAVs");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--seed", ta.seed, "Overrides the config seed (training and data)");
  train->add_option("--set", ta.sets, "Override one config key, e.g. --set lr=1e-3 (repeatable)");
  train->add_option("--resume", ta.resume, "Continue from this checkpoint");

  EnhanceArgs ea;
  auto* enhance = app.add_subcommand("enhance", "Enhance one WAV with a trained model");
  enhance->add_option("--checkpoint", ea.checkpoint, "Checkpoint from train");
  enhance->add_option("--in", ea.in, "Noisy input WAV (must match the checkpoint sample rate)")->required();
  enhance->add_option("--out", ea.out, "Enhanced output WAV")->required();
  enhance->add_option("--emit-spectrograms", ea.spectrogram_dir, "Write noisy.pgm and enhanced.pgm into this directory");
  enhance->add_option("--mask", ea.mask, "model, or ones for the identity debug mask")->capture_default_str();

  EvaluateArgs va;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score STOI and fwSNRseg on a manifest split");
  evaluate_cmd->add_option("--checkpoint", va.checkpoint, "Checkpoint from train");
  evaluate_cmd->add_option("--manifest", va.manifest, "manifest.tsv to score")->required();
  evaluate_cmd->add_option("--split", va.split, "train, dev or test")->capture_default_str();
  evaluate_cmd->add_option("--out", va.out, "Metrics CSV (STOI stored in [0,1])");
  evaluate_cmd->add_option("--mask", va.mask, "model, ones (identity) or oracle (exact IRM)")->capture_default_str();

  VerifyArgs ra;
  auto* verify = app.add_subcommand("verify", "Run the self-verification suite; exit 1 if any check fails");
  verify->add_option("--inject-fault", ra.fault, std::string("Negative control; known fault: ") + kFaultRelTableGrad);
  verify->add_flag("--list", ra.list, "List checks without running them");

  SpectrogramArgs sa;
  auto* spectrogram = app.add_subcommand("spectrogram", "Write a log-magnitude P5 image of a WAV");
  spectrogram->add_option("--in", sa.in, "Input WAV")->required();
  spectrogram->add_option("--out", sa.out, "Output PGM")->required();
  spectrogram->add_option("--nfft", sa.nfft, "FFT size")->capture_default_str();
  spectrogram->add_option("--hop", sa.hop, "Hop size")->capture_default_str();
  spectrogram->add_option("--range-db", sa.range_db, "Dynamic range below the peak")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(ta, out);
    if (*enhance) return cmd_enhance(ea, out);
    if (*evaluate_cmd) return cmd_evaluate(va, out);
    if (*verify) return cmd_verify(ra, out);
    if (*spectrogram) return cmd_spectrogram(sa, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace uformer
