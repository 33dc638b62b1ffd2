// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "uformer/nn.hpp"
#include "uformer/ops.hpp"
#include "uformer/optim.hpp"

using namespace uformer;
using oracle::random_tensor;

namespace {

// sum(f(x) * R) for a fixed random R, so every output coordinate matters.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

TEST(Matmul, IdentityAndPermutation) {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(ops::matmul(eye, a).values(), (std::vector<double>{1, 2, 3, 4}));
  Tensor<double> swap({2, 2}, {0, 1, 1, 0});
  EXPECT_EQ(ops::matmul(a, swap).values(), (std::vector<double>{2, 1, 4, 3}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor<double> a({2, 3}), b({2, 3});
  try {
    ops::matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3] x [2,3]"), std::string::npos);
  }
}

TEST(Matmul, BroadcastsBatchDims) {
  Rng rng(3);
  auto a = random_tensor({2, 3, 4, 5}, rng);
  auto b = random_tensor({3, 5, 2}, rng);
  auto c = ops::matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4, 2}));
  // Batch (1, 2) of the output uses a[1,2] and b[2].
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double ref = 0;
      for (std::size_t k = 0; k < 5; ++k) ref += a.at({1, 2, i, k}) * b.at({2, k, j});
      EXPECT_NEAR(c.at({1, 2, i, j}), ref, 1e-12);
    }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto plain = oracle::grad_check([&] { return ops::sum(ops::matmul(a, b)); }, {a, b});
    EXPECT_LT(plain.max_rel_err, 1e-6);
    auto batched_a = random_tensor({2, 3, 4}, rng);
    auto r = oracle::grad_check([&] { return weighted_sum(ops::matmul(batched_a, b), seed); }, {batched_a, b});
    EXPECT_LT(r.max_rel_err, 1e-4);
  }
}

TEST(Softmax, AnalyticCases) {
  auto s = ops::softmax(Tensor<double>({2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  s = ops::softmax(Tensor<double>({2}, {std::log(2.0), 0.0}));
  EXPECT_NEAR(s[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  auto s = ops::softmax(Tensor<float>({2}, {1000.0f, 0.0f}));
  // 64-bit reference: e^-1000 underflows to 0, so [1, 0].
  const long double ref0 = 1.0L / (1.0L + std::exp(-1000.0L));
  EXPECT_TRUE(std::isfinite(s[0]) && std::isfinite(s[1]));
  EXPECT_NEAR(s[0], static_cast<double>(ref0), 1e-7);
  EXPECT_NEAR(s[1], 0.0, 1e-7);
}

TEST(Softmax, SlicesSumToOneAlongAnyAxis) {
  Rng rng(11);
  for (long axis : {0L, 1L, 2L}) {
    auto x = random_tensor({3, 4, 5}, rng, -5, 5);
    auto s = ops::softmax(x, axis);
    const auto v = ops::detail::axis_view(x.shape(), static_cast<std::size_t>(axis));
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.inner; ++i) {
        double total = 0;
        for (std::size_t c = 0; c < v.extent; ++c) {
          const double w = s[(o * v.extent + c) * v.inner + i];
          EXPECT_GE(w, 0.0);
          total += w;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    auto r = oracle::grad_check([&] { return weighted_sum(ops::softmax(x, axis), 5); }, {x});
    EXPECT_LT(r.max_rel_err, 1e-4);
  }
}

TEST(LayerNorm, ConstantAndUnitCases) {
  auto ones = Tensor<double>::ones({4});
  auto zeros = Tensor<double>::zeros({4});
  auto y = ops::layer_norm(Tensor<double>({4}, {5, 5, 5, 5}), ones, zeros);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
  auto g2 = Tensor<double>::ones({2});
  auto b2 = Tensor<double>::zeros({2});
  y = ops::layer_norm(Tensor<double>({2}, {1, -1}), g2, b2);
  EXPECT_NEAR(y[0], 1.0, 1e-5);
  EXPECT_NEAR(y[1], -1.0, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 8}, rng, -2, 2);
    auto g = random_tensor({8}, rng, 0.5, 1.5);
    auto b = random_tensor({8}, rng);
    auto r = oracle::grad_check([&] { return weighted_sum(ops::layer_norm(x, g, b), seed); }, {x, g, b});
    EXPECT_LT(r.max_rel_err, 1e-5);
  }
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(2);
  auto x = random_tensor({1, 4, 5}, rng);
  auto k = Tensor<double>::ones({1, 1, 1, 1});
  EXPECT_EQ(ops::conv2d(x, k).values(), x.values());
}

TEST(Conv2d, AveragingKernelOnConstant) {
  auto x = Tensor<double>::full({1, 5, 5}, 2.0);
  auto k = Tensor<double>::full({1, 1, 3, 3}, 1.0 / 9.0);
  auto y = ops::conv2d(x, k);
  EXPECT_NEAR(y.at({0, 2, 2}), 2.0, 1e-12);
  EXPECT_NEAR(y.at({0, 0, 2}), 2.0 * 6.0 / 9.0, 1e-12);  // edge: 6 taps inside
  EXPECT_NEAR(y.at({0, 0, 0}), 2.0 * 4.0 / 9.0, 1e-12);  // corner: 4 taps inside
}

TEST(Conv2d, EvenKernelIsConfigError) {
  Tensor<double> x({1, 4, 4}), k({1, 1, 2, 3});
  EXPECT_THROW(ops::conv2d(x, k), ConfigError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 5, 5}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto r = oracle::grad_check([&] { return weighted_sum(ops::conv2d(x, k, b), seed); }, {x, k, b});
    EXPECT_LT(r.max_rel_err, 1e-5);
  }
}

TEST(Gru, ZeroParamsGiveZeroState) {
  nn::Gru<double> gru(3, 4);
  Rng rng(1);
  auto x = random_tensor({3}, rng);
  auto h = gru.cell(x, Tensor<double>::zeros({4}));
  for (double v : h.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Gru, SaturatedUpdateGateKeepsState) {
  Rng rng(4);
  nn::Gru<double> gru(3, 4);
  gru.init(rng);
  for (std::size_t j = 4; j < 8; ++j) gru.b_input[j] = 50.0;  // update-gate bias
  auto x = random_tensor({3}, rng);
  auto h_prev = random_tensor({4}, rng);
  auto h = gru.cell(x, h_prev);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(h[j], h_prev[j], 1e-12);
}

TEST(Gru, SequenceGradientMatchesFiniteDifferences) {
  Rng rng(9);
  nn::Gru<double> gru(3, 4);
  gru.init(rng);
  for (auto& v : gru.b_input.data()) v = rng.uniform(-0.5, 0.5);
  for (auto& v : gru.b_hidden.data()) v = rng.uniform(-0.5, 0.5);
  auto x = random_tensor({5, 2, 3}, rng);
  auto r = oracle::grad_check([&] { return weighted_sum(gru.sequence(x), 2); },
                              {x, gru.w_input, gru.w_hidden, gru.b_input, gru.b_hidden});
  EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Elementwise, PointwiseValues) {
  auto r = ops::relu(Tensor<double>({2}, {-1, 2}));
  EXPECT_EQ(r.values(), (std::vector<double>{0, 2}));
  auto p = ops::prelu(Tensor<double>({1}, {-2}), Tensor<double>({1}, {0.25}));
  EXPECT_DOUBLE_EQ(p[0], -0.5);
  EXPECT_DOUBLE_EQ(ops::sigmoid(Tensor<double>::scalar(0.0))[0], 0.5);
  EXPECT_THROW(ops::add(Tensor<double>({2, 3}), Tensor<double>({3, 2})), DimensionError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 4}, rng);
    auto y = random_tensor({3, 4}, rng);
    auto bias = random_tensor({4}, rng);
    auto alpha = random_tensor({3}, rng, 0.1, 0.4);
    auto s = random_tensor({1}, rng);
    auto loss = [&] {
      auto a = ops::add(ops::mul(x, y), bias);
      auto b = ops::sigmoid(ops::sub(a, ops::scale(y, 0.3)));
      auto c = ops::prelu(ops::add(ops::tanh(a), ops::relu(x)), alpha, 0);
      auto d = ops::mul(ops::square(c), s);
      return weighted_sum(ops::add(ops::add(b, d), ops::log1p(ops::square(x))), seed);
    };
    auto r = oracle::grad_check(loss, {x, y, bias, alpha, s});
    EXPECT_LT(r.max_rel_err, 1e-4);
  }
}

TEST(ShapeOps, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 4}, rng);
    auto y = random_tensor({2, 2, 4}, rng);
    auto loss = [&] {
      auto cat = ops::concat<double>({x, y}, 1);  // [2,5,4]
      auto p = ops::permute(cat, {2, 0, 1});       // [4,2,5]
      auto s = ops::slice(p, 2, 1, 4);             // [4,2,3]
      auto st = ops::stack<double>({ops::select(s, 0, 1), ops::select(s, 0, 3)});  // [2,2,3]
      auto flat = ops::reshape(st, {2, 6});
      auto t = ops::transpose(ops::reshape(ops::slice(s, 0, 0, 2), {6, 2}));  // [2,6]
      return weighted_sum(ops::add(flat, ops::square(t)), seed);
    };
    auto r = oracle::grad_check(loss, {x, y});
    EXPECT_LT(r.max_rel_err, 1e-4);
  }
}

TEST(RelShift, UnshiftIsTheAdjoint) {
  Rng rng(21);
  for (std::size_t n : {1u, 2u, 5u}) {
    auto x = random_tensor({3, n, 2 * n - 1}, rng);
    auto y = random_tensor({3, n, n}, rng);
    double lhs = 0, rhs = 0;
    auto sx = ops::rel_shift(x);
    auto uy = ops::rel_unshift(y);
    for (std::size_t i = 0; i < y.numel(); ++i) lhs += sx[i] * y[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * uy[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
  auto x = random_tensor({2, 4, 7}, rng);
  auto r = oracle::grad_check([&] {
    return ops::add(weighted_sum(ops::rel_shift(x, true), 3), weighted_sum(ops::rel_unshift(ops::rel_shift(x)), 4));
  }, {x});
  EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Backward, SumAndSquareGradients) {
  Rng rng(1);
  auto x = random_tensor({2, 3}, rng).set_requires_grad();
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = ops::sum(x);
  }
  backward(loss, tape);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);

  x.zero_grad();
  Tape<double> tape2;
  {
    auto rec = tape2.record();
    loss = ops::sum(ops::mul(x, x));
  }
  backward(loss, tape2);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, FanOutAccumulates) {
  auto x = Tensor<double>::full({3}, 0.7).set_requires_grad();
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = ops::add(ops::sum(x), ops::sum(x));
  }
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = Tensor<double>::ones({3}).set_requires_grad();
  Tape<double> tape;
  Tensor<double> y;
  {
    auto rec = tape.record();
    y = ops::scale(x, 2.0);
  }
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, VisitsEachEntryOnceInTopologicalOrder) {
  Rng rng(5);
  auto x = random_tensor({4}, rng).set_requires_grad();
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = ops::sum(ops::sigmoid(ops::scale(x, 3.0)));
  }
  ASSERT_EQ(tape.size(), 3u);
  // Inputs of every entry are leaves or outputs of earlier entries.
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (const auto& in : tape.entries()[i].inputs) {
      bool earlier = !in->recorded;
      for (std::size_t j = 0; j < i; ++j) earlier = earlier || tape.entries()[j].output == in;
      EXPECT_TRUE(earlier);
    }
}

TEST(Backward, ReplayIsBitIdentical) {
  Rng rng(6);
  auto w = random_tensor({4, 4}, rng).set_requires_grad();
  auto x = random_tensor({3, 4}, rng);
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = ops::sum(ops::square(ops::softmax(ops::matmul(ops::tanh(ops::matmul(x, w)), w), -1)));
  }
  tape.backward(loss);
  const std::vector<double> first(w.grad().begin(), w.grad().end());
  w.zero_grad();
  tape.backward(loss);
  const std::vector<double> second(w.grad().begin(), w.grad().end());
  EXPECT_EQ(first, second);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto w = Tensor<float>::full({3}, 1.5f).set_requires_grad();
  ParamList<float> params{{"w", w}};
  zero_grads(params);
  AdamState<float> state;
  adam_step(params, state);
  for (float v : w.data()) EXPECT_EQ(v, 1.5f);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = Tensor<double>({3}, {0.0, 0.0, 0.0}).set_requires_grad();
  ParamList<double> params{{"w", w}};
  zero_grads(params);
  w.grad()[0] = 3.0;
  w.grad()[1] = -0.01;
  w.grad()[2] = 200.0;
  AdamState<double> state;
  adam_step(params, state);
  EXPECT_NEAR(w[0], -8e-4, 1e-9);
  EXPECT_NEAR(w[1], 8e-4, 1e-8);
  EXPECT_NEAR(w[2], -8e-4, 1e-9);
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  auto w = Tensor<double>::scalar(0.0).set_requires_grad();
  ParamList<double> params{{"w", w}};
  AdamState<double> state(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  for (int step = 0; step < 100; ++step) {
    zero_grads(params);
    Tape<double> tape;
    Tensor<double> loss;
    {
      auto rec = tape.record();
      loss = ops::square(ops::add(w, Tensor<double>::scalar(-3.0)));
    }
    tape.backward(loss);
    adam_step(params, state);
  }
  EXPECT_LT(std::abs(w[0] - 3.0), 0.1);
  EXPECT_EQ(state.step, 100u);
}

TEST(Adam, MissingGradientNamesParameter) {
  auto w = Tensor<double>::scalar(0.0).set_requires_grad();
  ParamList<double> params{{"enc0.proj.weight", w}};
  AdamState<double> state;
  try {
    adam_step(params, state);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("enc0.proj.weight"), std::string::npos);
  }
}

TEST(Adam, ClipGradNormRescales) {
  auto w = Tensor<double>({2}, {0.0, 0.0}).set_requires_grad();
  ParamList<double> params{{"w", w}};
  zero_grads(params);
  w.grad()[0] = 30.0;
  w.grad()[1] = 40.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 5.0), 50.0);
  EXPECT_NEAR(w.grad()[0], 3.0, 1e-12);
  EXPECT_NEAR(w.grad()[1], 4.0, 1e-12);
}
