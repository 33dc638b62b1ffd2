// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <sstream>

#include "uformer/config.hpp"

using namespace uformer;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsAreValid) {
  const RunConfig c = parse("");
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model.bins, 256u);
  EXPECT_EQ(c.stft.nfft, 512u);
  EXPECT_EQ(c.train.clip_norm, 5.0);
  EXPECT_EQ(c.snrs, (std::vector<double>{-5, 0, 5}));
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const RunConfig c = parse(
      "# toy run\n"
      "variant = tf\n"
      "  d_layers=16, 8,4 ,2   # widths\n"
      "heads_low = 4\n"
      "lr = 3e-3\n"
      "loss = irm_mse\n"
      "nfft = 256\n"
      "hop = 128\n"
      "snrs = -5, 10\n"
      "score_scale = head_dim\n");
  EXPECT_EQ(c.model.variant, Variant::kTf);
  EXPECT_EQ(c.model.d_layers, (std::array<std::size_t, 4>{16, 8, 4, 2}));
  EXPECT_EQ(c.model.heads.low_band, 4u);
  EXPECT_EQ(c.train.lr, 3e-3);
  EXPECT_EQ(c.train.loss, LossKind::kIrmMse);
  EXPECT_EQ(c.model.bins, 128u);
  EXPECT_EQ(c.snrs, (std::vector<double>{-5, 10}));
  EXPECT_EQ(c.model.scale, ScoreScale::kHeadDim);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, UnknownKeyNamesFileAndLine) {
  const auto msg = error_of("lr = 1e-3\n\nlearning_rate = 2\n");
  EXPECT_NE(msg.find("test.cfg:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("learning_rate"), std::string::npos) << msg;
}

TEST(Config, MalformedValuesAreRejected) {
  EXPECT_NE(error_of("lr = fast\n").find("test.cfg:1: lr"), std::string::npos);
  EXPECT_NE(error_of("epochs = -1\n").find("epochs"), std::string::npos);
  EXPECT_NE(error_of("variant = cnn\n").find("variant"), std::string::npos);
  EXPECT_NE(error_of("d_layers = 16,8\n").find("d_layers"), std::string::npos);
  EXPECT_NE(error_of("just words\n").find("key = value"), std::string::npos);
  EXPECT_NE(error_of("lr = 1e-3 extra\n").find("lr"), std::string::npos);
}

TEST(Config, CrossFieldChecks) {
  RunConfig c;
  c.model.bins = 128;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.model.d_layers = {16, 8, 4, 3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.train.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.train.epochs = 0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RenderParsesBackToTheSameConfig) {
  RunConfig c = parse("variant = tf\nlr = 0.00123456789\nsnrs = -2.5,7\nsplit = 2,1,1\nfixture_duration = 1.25\nspan = 3\n");
  const RunConfig back = parse(render_config(c));
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_EQ(back.stft, c.stft);
  EXPECT_EQ(back.snrs, c.snrs);
  EXPECT_EQ(back.split.train, 2.0);
  EXPECT_EQ(back.fixture_duration, 1.25);
  EXPECT_EQ(render_config(back), render_config(c));
}

TEST(Config, EveryKeyIsRendered) {
  const std::string text = render_config(RunConfig{});
  for (const auto& key : config_keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
}

TEST(Config, MissingFileNamesThePath) {
  try {
    load_config("/nonexistent/run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.cfg"), std::string::npos);
  }
}
