// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "oracles.hpp"
#include "test_helpers.hpp"
#include "uformer/checkpoint.hpp"
#include "uformer/data.hpp"
#include "uformer/train.hpp"

using namespace uformer;
using testing_util::ScratchDir;

namespace {

// nfft 16 gives 8 network bins, matching ModelConfig::toy().
StftConfig tiny_stft() {
  StftConfig c;
  c.nfft = 16;
  c.hop = 8;
  return c;
}

std::vector<Batchable<float>> tiny_segments(std::size_t count, std::uint64_t seed = 1) {
  std::vector<Segment> segs;
  for (std::uint64_t s = seed; segs.size() < count; ++s) {
    const auto ex = synth_fixture(FixtureKind::kSineMix, s, 0.0, 0.01, tiny_stft());  // 160 samples, 21 frames
    for (auto& seg : segment(ex, 4))
      if (segs.size() < count) segs.push_back(std::move(seg));
  }
  return prepare_all<float>(segs);
}

template <typename T>
std::vector<std::vector<T>> snapshot(UTransformer<T>& m) {
  std::vector<std::vector<T>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::vector<double> losses(const std::vector<HistoryRow>& h) {
  std::vector<double> out;
  for (const auto& r : h) out.push_back(r.train_loss);
  return out;
}

TrainConfig quick(std::size_t epochs, std::size_t batch = 2) {
  TrainConfig c;
  c.lr = 3e-3;
  c.epochs = epochs;
  c.batch_size = batch;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(SegmentLoss, IrmMseIsZeroAtTheIrm) {
  const auto seg = tiny_segments(1)[0];
  EXPECT_EQ(segment_loss(seg.irm, seg, LossKind::kIrmMse).item(), 0.0f);
  EXPECT_GT(segment_loss(Tensor<float>::ones(seg.irm.shape()), seg, LossKind::kIrmMse).item(), 0.0f);
}

TEST(SegmentLoss, PaddedRowsDoNotCount) {
  Segment s;
  s.valid = 2;
  s.noisy_mag = Tensor<double>::ones({4, 2});
  s.clean_mag = Tensor<double>::ones({4, 2});
  s.irm = Tensor<double>::ones({4, 2});
  Tensor<double> mask = Tensor<double>::ones({4, 2});
  for (std::size_t i = 4; i < 8; ++i) mask[i] = 100.0;  // garbage in padded rows
  const auto b = prepare<double>(s);
  EXPECT_EQ(segment_loss(mask, b, LossKind::kMagnitudeMse).item(), 0.0);
  EXPECT_EQ(segment_loss(mask, b, LossKind::kIrmMse).item(), 0.0);
  s.valid = 0;
  EXPECT_ANY_THROW(segment_loss(mask, prepare<double>(s), LossKind::kIrmMse));
}

TEST(SegmentLoss, NoiseFreeTargetIsAllOnes) {
  Segment s;
  s.valid = 3;
  s.noisy_mag = Tensor<double>::ones({3, 2});
  s.clean_mag = s.noisy_mag;
  s.irm = Tensor<double>::ones({3, 2});
  const auto b = prepare<double>(s);
  EXPECT_EQ(segment_loss(Tensor<double>::ones({3, 2}), b, LossKind::kMagnitudeMse).item(), 0.0);
  Tensor<double> half = Tensor<double>::ones({3, 2});
  for (auto& v : half.data()) v = 0.5;
  EXPECT_NEAR(segment_loss(half, b, LossKind::kMagnitudeMse).item(), 0.25, 1e-12);
}

TEST(SegmentLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Segment s;
  s.valid = 3;
  s.noisy_mag = oracle::random_tensor({4, 3}, rng, 0.1, 2.0);
  s.clean_mag = oracle::random_tensor({4, 3}, rng, 0.1, 2.0);
  s.irm = oracle::random_tensor({4, 3}, rng, 0.0, 1.0);
  const auto b = prepare<double>(s);
  for (auto kind : {LossKind::kMagnitudeMse, LossKind::kIrmMse}) {
    Tensor<double> mask = oracle::random_tensor({4, 3}, rng, 0.0, 1.0);
    const double err = oracle::grad_check([&] { return segment_loss(mask, b, kind); }, {mask}).max_rel_err;
    EXPECT_LT(err, 1e-6) << loss_name(kind);
  }
}

TEST(TrainLoop, ZeroEpochsLeavesModelUnchanged) {
  auto model = init_params<float>(ModelConfig::toy(), 1);
  const auto before = snapshot(model);
  TrainState<float> state;
  const auto h = train_loop(model, tiny_segments(4), {}, quick(0), state);
  EXPECT_TRUE(h.empty());
  EXPECT_EQ(snapshot(model), before);
  EXPECT_EQ(state.step, 0u);
}

TEST(TrainLoop, OverfitsOneSegment) {
  auto model = init_params<float>(ModelConfig::toy(), 1);
  TrainState<float> state;
  TrainConfig cfg = quick(1000, 1);
  cfg.max_steps = 200;
  const auto h = train_loop(model, tiny_segments(1), {}, cfg, state);
  ASSERT_EQ(h.size(), 200u);
  EXPECT_LE(h.back().train_loss, 0.1 * h.front().train_loss) << h.front().train_loss << " -> " << h.back().train_loss;
}

TEST(TrainLoop, FixedSeedIsBitExact) {
  const auto segs = tiny_segments(6);
  auto run = [&](std::uint64_t seed) {
    auto model = init_params<float>(ModelConfig::toy(), seed);
    TrainState<float> state;
    TrainConfig cfg = quick(5);
    cfg.seed = seed;
    cfg.max_steps = 10;
    return losses(train_loop(model, segs, {}, cfg, state));
  };
  const auto a = run(3), b = run(3);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, run(4));
}

TEST(TrainLoop, EpochEndsLogDevLossAndCheckpoint) {
  auto model = init_params<float>(ModelConfig::toy(), 1);
  TrainState<float> state;
  std::vector<std::uint64_t> epochs, checkpoints;
  TrainHooks<float> hooks;
  hooks.on_epoch = [&](const TrainState<float>& s, double) { epochs.push_back(s.epoch); };
  hooks.checkpoint = [&](const TrainState<float>& s) { checkpoints.push_back(s.step); };
  const auto h = train_loop(model, tiny_segments(3), tiny_segments(2, 9), quick(3), state, hooks);
  ASSERT_EQ(h.size(), 6u);  // 2 batches of up to 2 segments, 3 epochs
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(std::isnan(h[i].dev_loss), i % 2 == 0) << "step " << h[i].step;
  EXPECT_EQ(epochs, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(checkpoints, (std::vector<std::uint64_t>{2, 4, 6}));
  EXPECT_EQ(state.epoch, 3u);
}

TEST(TrainLoop, NonFiniteLossAbortsNamingTheStep) {
  auto segs = tiny_segments(2);
  segs[1].clean[0] = std::numeric_limits<float>::quiet_NaN();
  auto model = init_params<float>(ModelConfig::toy(), 1);
  TrainState<float> state;
  TrainConfig cfg = quick(1, 1);
  try {
    train_loop(model, segs, {}, cfg, state);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
  }
}

TEST(TrainLoop, EmptyTrainingSetIsDataError) {
  auto model = init_params<float>(ModelConfig::toy(), 1);
  TrainState<float> state;
  EXPECT_THROW(train_loop(model, {}, {}, quick(1), state), DataError);
}

TEST(History, CsvRoundTrip) {
  ScratchDir dir;
  std::vector<HistoryRow> rows{{1, 0.5}, {2, 0.25, 0.75}};
  write_history_csv(dir.file("h.csv"), rows);
  const auto back = read_history_csv(dir.file("h.csv"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].step, 1u);
  EXPECT_EQ(back[0].train_loss, 0.5);
  EXPECT_TRUE(std::isnan(back[0].dev_loss));
  EXPECT_EQ(back[1].dev_loss, 0.75);
}

TEST(Checkpoint, RoundTripForwardIsBitIdentical) {
  ScratchDir dir;
  auto model = init_params<float>(ModelConfig::toy(), 2);
  TrainState<float> state;
  TrainConfig cfg = quick(1);
  cfg.max_steps = 2;
  train_loop(model, tiny_segments(4), {}, cfg, state);
  save_checkpoint(dir.file("c.bin"), model, state, cfg, tiny_stft());
  const auto c = load_checkpoint(dir.file("c.bin"));
  EXPECT_EQ(c.stft, tiny_stft());
  EXPECT_EQ(c.train.lr, cfg.lr);
  EXPECT_EQ(c.step, 2u);
  auto loaded = model_from_checkpoint<float>(c);
  EXPECT_EQ(snapshot(loaded), snapshot(model));
  const auto x = tiny_segments(1, 30)[0].noisy;
  const auto a = model.forward(x), b = loaded.forward(x);
  EXPECT_EQ(std::vector<float>(a.data().begin(), a.data().end()), std::vector<float>(b.data().begin(), b.data().end()));
  EXPECT_FALSE(std::filesystem::exists(dir.file("c.bin.tmp")));
}

TEST(Checkpoint, TruncatedFileIsRejectedAsCorrupt) {
  ScratchDir dir;
  auto model = init_params<float>(ModelConfig::toy(), 2);
  save_checkpoint(dir.file("c.bin"), model, TrainState<float>{}, quick(1));
  const auto size = std::filesystem::file_size(dir.file("c.bin"));
  for (auto keep : {size - 1, size / 2, std::uintmax_t{6}}) {
    std::filesystem::copy_file(dir.file("c.bin"), dir.file("t.bin"), std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(dir.file("t.bin"), keep);
    try {
      load_checkpoint(dir.file("t.bin"));
      ADD_FAILURE() << "truncation to " << keep << " bytes accepted";
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos) << e.what();
    }
  }
  {
    std::ofstream(dir.file("c.bin"), std::ios::app | std::ios::binary) << 'x';
  }
  EXPECT_THROW(load_checkpoint(dir.file("c.bin")), DataError);
}

TEST(Checkpoint, VersionMismatchIsRejected) {
  ScratchDir dir;
  auto model = init_params<float>(ModelConfig::toy(), 2);
  save_checkpoint(dir.file("c.bin"), model, TrainState<float>{}, quick(1));
  {
    std::fstream f(dir.file("c.bin"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(char(kCheckpointVersion + 1));
  }
  try {
    load_checkpoint(dir.file("c.bin"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RestoreIntoDifferentConfigIsRejected) {
  ScratchDir dir;
  auto model = init_params<float>(ModelConfig::toy(), 2);
  save_checkpoint(dir.file("c.bin"), model, TrainState<float>{}, quick(1));
  auto other = init_params<float>(ModelConfig::toy(Variant::kTf), 2);
  EXPECT_THROW(restore_params(load_checkpoint(dir.file("c.bin")), other), ConfigError);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  ScratchDir dir;
  const auto segs = tiny_segments(5);
  const auto dev = tiny_segments(2, 40);
  const TrainConfig cfg = quick(3);

  auto full = init_params<float>(ModelConfig::toy(), 6);
  TrainState<float> full_state;
  const auto full_h = train_loop(full, segs, dev, cfg, full_state);

  auto first = init_params<float>(ModelConfig::toy(), 6);
  TrainState<float> first_state;
  TrainConfig stop = cfg;
  stop.max_steps = 4;  // mid-epoch: epoch 1, batch 1
  auto h = train_loop(first, segs, dev, stop, first_state);
  save_checkpoint(dir.file("c.bin"), first, first_state, cfg);

  const auto c = load_checkpoint(dir.file("c.bin"));
  auto resumed = model_from_checkpoint<float>(c);
  TrainState<float> state;
  restore(c, resumed, state);
  EXPECT_EQ(state.epoch, 1u);
  EXPECT_EQ(state.batch, 1u);
  const auto rest = train_loop(resumed, segs, dev, cfg, state);
  h.insert(h.end(), rest.begin(), rest.end());

  ASSERT_EQ(h.size(), full_h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_EQ(h[i].step, full_h[i].step);
    EXPECT_EQ(h[i].train_loss, full_h[i].train_loss) << "step " << h[i].step;
    EXPECT_EQ(std::isnan(h[i].dev_loss), std::isnan(full_h[i].dev_loss));
    if (!std::isnan(h[i].dev_loss)) {
      EXPECT_EQ(h[i].dev_loss, full_h[i].dev_loss);
    }
  }
  EXPECT_EQ(snapshot(resumed), snapshot(full));
}

TEST(PredictMask, StitchesSegmentsAndDropsPadding) {
  auto model = init_params<float>(ModelConfig::toy(), 3);
  Rng rng(8);
  Tensor<double> mag = oracle::random_tensor({10, 8}, rng, 0.0, 2.0);  // 4 + 4 + 2 frames
  const auto mask = predict_mask(model, mag);
  ASSERT_EQ(mask.shape(), (Shape{10, 8}));
  Tensor<float> last({4, 8});
  for (std::size_t i = 0; i < 2 * 8; ++i) last[i] = static_cast<float>(mag[8 * 8 + i]);
  const auto m = model.forward(last);
  for (std::size_t i = 0; i < 2 * 8; ++i) EXPECT_EQ(mask[8 * 8 + i], static_cast<double>(m[i]));
}

TEST(Evaluate, CleanInputWithIdentityMaskScoresPerfectly) {
  const auto sig = synth_signals(FixtureKind::kSineMix, 2, 1.0);
  MixtureExample ex;
  ex.id = "clean";
  ex.clean = sig.clean;
  ex.mixture = sig.clean;
  ex.interference = sig.clean;
  for (auto& v : ex.interference.samples) v = 0.0;
  featurize(ex);
  const auto report = evaluate({ex}, identity_mask());
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_NEAR(report.rows[0].enhanced.stoi, 1.0, 1e-6);
  EXPECT_NEAR(report.rows[0].enhanced.fwsnrseg, 35.0, 1e-6);
  EXPECT_NEAR(report.rows[0].unprocessed.stoi, 1.0, 1e-6);
}

TEST(Evaluate, OracleMaskBeatsUnprocessedAndThreadsAgree) {
  std::vector<MixtureExample> exs;
  for (std::uint64_t s = 1; s <= 3; ++s) exs.push_back(synth_fixture(static_cast<FixtureKind>(s % 3), s, 0.0, 1.0));
  ::setenv("UFORMER_THREADS", "1", 1);
  const auto serial = evaluate(exs, oracle_irm_mask());
  ::setenv("UFORMER_THREADS", "3", 1);
  const auto parallel = evaluate(exs, oracle_irm_mask());
  ::unsetenv("UFORMER_THREADS");
  ASSERT_EQ(serial.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(serial.rows[i].utterance_id, exs[i].id);
    EXPECT_EQ(serial.rows[i].enhanced.fwsnrseg, parallel.rows[i].enhanced.fwsnrseg);
    EXPECT_GT(serial.rows[i].enhanced.fwsnrseg, serial.rows[i].unprocessed.fwsnrseg + 5.0);
    EXPECT_GE(serial.rows[i].enhanced.stoi, serial.rows[i].unprocessed.stoi);
  }
}

TEST(Evaluate, BadThreadCountIsConfigError) {
  ::setenv("UFORMER_THREADS", "zero", 1);
  EXPECT_THROW(worker_threads(4), ConfigError);
  ::unsetenv("UFORMER_THREADS");
}

TEST(Evaluate, MetricsCsvMeanRowIsArithmeticMean) {
  ScratchDir dir;
  MetricReport r;
  r.rows.push_back({"a", -5.0, {0.5, 10.0}, {0.4, 2.0}});
  r.rows.push_back({"b", 5.0, {0.8, 21.0}, {0.6, 4.0}});
  write_metrics_csv(dir.file("m.csv"), r);
  std::ifstream in(dir.file("m.csv"));
  std::string header, line, last_two[2];
  std::getline(in, header);
  EXPECT_EQ(header, "utterance_id,snr_db,stoi,fwsnrseg");
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[1], "a/unprocessed,-5,0.4,2");
  EXPECT_EQ(lines[4], "mean,0,0.65,15.5");
  EXPECT_EQ(lines[5], "mean/unprocessed,0,0.5,3");
}
