// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "uformer/attention.hpp"

using namespace uformer;
using oracle::random_tensor;

namespace {

AxialAttention<double> make_attention(std::size_t heads, std::size_t d, std::size_t n, Rng& rng,
                                      TableKind table = TableKind::kPerRole) {
  AttentionConfig cfg;
  cfg.heads = heads;
  cfg.d_layer = d;
  cfg.length = n;
  cfg.table = table;
  AxialAttention<double> att(cfg);
  oracle::randomize(att, rng);
  return att;
}

void zero_tables(AxialAttention<double>& att) {
  att.visit("", [](const std::string& name, Tensor<double>& t) {
    if (name.find(".rel_") != std::string::npos)
      for (auto& v : t.data()) v = 0.0;
  });
}

std::vector<Tensor<double>> all_params(AxialAttention<double>& att) {
  std::vector<Tensor<double>> out;
  att.visit("", [&](const std::string&, Tensor<double>& t) { out.push_back(t); });
  return out;
}

// Reorders axis `axis` of a [T, F, d] tensor by perm.
Tensor<double> permute_axis(const Tensor<double>& x, long axis, const std::vector<std::size_t>& perm) {
  std::vector<Tensor<double>> parts;
  for (std::size_t i : perm) parts.push_back(ops::slice(x, axis, i, i + 1));
  return ops::concat(parts, axis);
}

}  // namespace

TEST(ScaledDotProduct, SingleRowReturnsValues) {
  Rng rng(1);
  auto q = random_tensor({1, 4}, rng), k = random_tensor({1, 4}, rng), v = random_tensor({1, 3}, rng);
  EXPECT_EQ(scaled_dot_product(q, k, v).values(), v.values());
}

TEST(ScaledDotProduct, OrthogonalQueryAveragesValues) {
  Tensor<double> q({2, 2}, {1, 0, 1, 0});
  Tensor<double> k({2, 2}, {0, 1, 0, 2});
  Tensor<double> v({2, 2}, {1, 2, 3, 6});
  auto out = scaled_dot_product(q, k, v);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR(out.at({r, 0}), 2.0, 1e-12);
    EXPECT_NEAR(out.at({r, 1}), 4.0, 1e-12);
  }
}

TEST(ScaledDotProduct, MatchesLoopOracle) {
  for (auto scale : {ScoreScale::kSequenceLength, ScoreScale::kHeadDim}) {
    Rng rng(7);
    auto q = random_tensor({3, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 4}, rng);
    const double s = 1.0 / std::sqrt(scale == ScoreScale::kSequenceLength ? 3.0 : 4.0);
    auto ref = oracle::attention_loops(oracle::to_mat(q), oracle::to_mat(k), oracle::to_mat(v), s);
    EXPECT_LT(oracle::max_abs_diff(ref, scaled_dot_product(q, k, v, scale)), 1e-6);
  }
}

TEST(ScaledDotProduct, EmptySequenceIsError) {
  Tensor<double> q({1, 2});
  EXPECT_THROW(scaled_dot_product(Tensor<double>({2}), Tensor<double>({2}), Tensor<double>({2})), DimensionError);
  (void)q;
}

TEST(AxialAttention, ZeroTablesReduceToPlainAttention) {
  Rng rng(2);
  auto att = make_attention(1, 6, 5, rng);
  zero_tables(att);
  auto x = random_tensor({5, 6}, rng);
  auto q = ops::matmul(x, att.w_query), k = ops::matmul(x, att.w_key), v = ops::matmul(x, att.w_value);
  auto ref = ops::matmul(scaled_dot_product(q, k, v), att.w_out);
  EXPECT_LT(oracle::max_abs_diff(ref, axial_attention(x, att)), 1e-6);
}

TEST(AxialAttention, SinglePositionUsesValuePlusOffsetZero) {
  Rng rng(3);
  auto att = make_attention(2, 4, 1, rng);
  auto x = random_tensor({1, 4}, rng);
  // Heads are contiguous column blocks, so v + r^V_0 concatenates per head.
  auto v = ops::matmul(x, att.w_value);
  auto rv = ops::reshape(att.value_table(), {1, 4});
  auto ref = ops::matmul(ops::add(v, rv), att.w_out);
  EXPECT_LT(oracle::max_abs_diff(ref, axial_attention(x, att)), 1e-12);
  // q/k play no role.
  for (auto& w : att.w_query.data()) w *= 3.0;
  for (auto& w : att.w_key.data()) w = -w;
  EXPECT_LT(oracle::max_abs_diff(ref, axial_attention(x, att)), 1e-12);
}

TEST(AxialAttention, MatchesPositionSensitiveLoopOracle) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto att = make_attention(2, 8, 4, rng);
    auto x = random_tensor({4, 8}, rng);
    EXPECT_LT(oracle::max_abs_diff(oracle::position_attention_loops(oracle::to_mat(x), att), axial_attention(x, att)),
              1e-6);
    att.config.scale = ScoreScale::kHeadDim;
    EXPECT_LT(oracle::max_abs_diff(oracle::position_attention_loops(oracle::to_mat(x), att), axial_attention(x, att)),
              1e-6);
  }
}

TEST(AxialAttention, SharedTableMatchesOracle) {
  Rng rng(4);
  auto att = make_attention(2, 4, 5, rng, TableKind::kShared);
  auto x = random_tensor({5, 4}, rng);
  EXPECT_TRUE(att.query_table().same_node(att.key_table()));
  EXPECT_TRUE(att.query_table().same_node(att.value_table()));
  EXPECT_LT(oracle::max_abs_diff(oracle::position_attention_loops(oracle::to_mat(x), att), axial_attention(x, att)),
            1e-6);
}

TEST(AxialAttention, LocalSpanMatchesOracle) {
  Rng rng(5);
  auto att = make_attention(2, 4, 6, rng);
  att.config.span = 2;
  auto x = random_tensor({6, 4}, rng);
  EXPECT_LT(oracle::max_abs_diff(oracle::position_attention_loops(oracle::to_mat(x), att), axial_attention(x, att)),
            1e-6);
}

TEST(AxialAttention, TableExtentMismatchIsError) {
  Rng rng(6);
  auto att = make_attention(1, 4, 3, rng);
  EXPECT_THROW(axial_attention(random_tensor({4, 4}, rng), att), DimensionError);
}

TEST(AxialAttention, WeightsAreRowStochastic) {
  Rng rng(8);
  auto att = make_attention(2, 8, 6, rng);
  auto x = random_tensor({3, 6, 8}, rng, -3, 3);
  auto w = axial_attention_weights(x, att);
  ASSERT_EQ(w.shape(), (Shape{3, 2, 6, 6}));
  for (std::size_t row = 0; row < w.numel() / 6; ++row) {
    double total = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_GE(w[row * 6 + c], 0.0);
      total += w[row * 6 + c];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(AxialAttention, TablesAreEnumeratedWithFullExtent) {
  Rng rng(9);
  auto att = make_attention(2, 8, 5, rng);
  std::vector<std::string> names;
  att.visit("a", [&](const std::string& name, Tensor<double>& t) {
    names.push_back(name);
    if (name.find(".rel_") != std::string::npos) {
      EXPECT_EQ(t.shape(), (Shape{2, 9, 4}));
      EXPECT_TRUE(t.requires_grad());
    }
  });
  EXPECT_EQ(names, (std::vector<std::string>{"a.w_query", "a.w_key", "a.w_value", "a.w_out", "a.rel_query",
                                             "a.rel_key", "a.rel_value"}));
  auto shared = make_attention(2, 8, 5, rng, TableKind::kShared);
  std::size_t tables = 0;
  shared.visit("", [&](const std::string& name, Tensor<double>&) { tables += name.find(".rel_") != std::string::npos; });
  EXPECT_EQ(tables, 1u);
}

TEST(AxialAttention, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (auto kind : {TableKind::kPerRole, TableKind::kShared}) {
      Rng rng(seed);
      auto att = make_attention(2, 4, 4, rng, kind);
      auto x = random_tensor({2, 4, 4}, rng);
      Rng wrng(seed + 100);
      auto r_out = random_tensor({2, 4, 4}, wrng);
      auto params = all_params(att);
      params.push_back(x);
      auto res = oracle::grad_check([&] { return ops::sum(ops::mul(axial_attention(x, att), r_out)); }, params);
      EXPECT_LT(res.max_rel_err, 1e-4) << "seed " << seed;
    }
  }
}

TEST(MultiHeadTime, SingleRowIsOneAttentionCall) {
  Rng rng(10);
  auto att = make_attention(2, 4, 3, rng);
  auto x = random_tensor({3, 1, 4}, rng);
  auto ref = axial_attention(ops::reshape(x, {3, 4}), att);
  EXPECT_LT(oracle::max_abs_diff(ref, multi_head_time(x, att)), 1e-12);
}

TEST(MultiHeadTime, MatchesLoopOracleAndIsRowEquivariant) {
  Rng rng(11);
  auto att = make_attention(2, 4, 3, rng);
  auto x = random_tensor({3, 2, 4}, rng);
  auto out = multi_head_time(x, att);
  EXPECT_LT(oracle::max_abs_diff(oracle::time_attention_loops(x, att), out), 1e-6);

  auto x3 = random_tensor({3, 4, 4}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto lhs = multi_head_time(permute_axis(x3, 1, perm), att);
  auto rhs = permute_axis(multi_head_time(x3, att), 1, perm);
  EXPECT_LT(oracle::max_abs_diff(lhs, rhs), 1e-12);
}

TEST(MultiHeadFreq, SingleFrameIsOneAttentionCall) {
  Rng rng(12);
  auto att = make_attention(2, 4, 5, rng);
  auto x = random_tensor({1, 5, 4}, rng);
  auto ref = axial_attention(ops::reshape(x, {5, 4}), att);
  EXPECT_LT(oracle::max_abs_diff(ref, multi_head_freq(x, att)), 1e-12);
}

TEST(MultiHeadFreq, MatchesLoopOracleAndIsFrameEquivariant) {
  Rng rng(13);
  auto att = make_attention(2, 4, 3, rng);
  auto x = random_tensor({2, 3, 4}, rng);
  EXPECT_LT(oracle::max_abs_diff(oracle::freq_attention_loops(x, att), multi_head_freq(x, att)), 1e-6);

  auto x4 = random_tensor({4, 3, 4}, rng);
  const std::vector<std::size_t> perm{3, 1, 0, 2};
  auto lhs = multi_head_freq(permute_axis(x4, 0, perm), att);
  auto rhs = permute_axis(multi_head_freq(x4, att), 0, perm);
  EXPECT_LT(oracle::max_abs_diff(lhs, rhs), 1e-12);
}

TEST(MultiHeadFreq, TransposeSymmetryWithTime) {
  Rng rng(14);
  auto att = make_attention(2, 4, 3, rng);
  auto x = random_tensor({3, 3, 4}, rng);
  auto lhs = multi_head_freq(x, att);
  auto rhs = ops::permute(multi_head_time(ops::permute(x, {1, 0, 2}), att), {1, 0, 2});
  EXPECT_LT(oracle::max_abs_diff(lhs, rhs), 1e-12);
}

TEST(BandSplit, HalvesAtFourKilohertz) {
  Tensor<double> x({2, 256, 3});
  auto [low, high] = band_split(x);
  EXPECT_EQ(low.shape(), (Shape{2, 128, 3}));
  EXPECT_EQ(high.shape(), (Shape{2, 128, 3}));
  EXPECT_DOUBLE_EQ(128.0 * 16000.0 / 512.0, 4000.0);
}

TEST(BandSplit, RoundTripIsBitExact) {
  Rng rng(15);
  for (std::size_t f : {2u, 6u, 16u}) {
    auto x = random_tensor({3, f, 5}, rng);
    auto [low, high] = band_split(x);
    EXPECT_EQ(band_join(low, high).values(), x.values());
  }
  Tensor<double> two({1, 2, 1}, {10.0, 20.0});
  auto [lo, hi] = band_split(two);
  EXPECT_EQ(lo[0], 10.0);
  EXPECT_EQ(hi[0], 20.0);
  EXPECT_THROW(band_split(Tensor<double>({1, 3, 1})), ConfigError);
}

TEST(TfBlock, ZeroInputGivesZeroSum) {
  BlockShape s{4, 8, 16, 0, ScoreScale::kSequenceLength};
  auto block = make_tf_block<double>(s, HeadCounts{});
  Rng rng(16);
  block.init(rng);
  auto m = tf_attention_sum(Tensor<double>::zeros({4, 8, 16}), block);
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(tf_attention_block(random_tensor({4, 8, 16}, rng), block).shape(), (Shape{4, 8, 16}));
}

TEST(TfBlock, ZeroOutputProjectionsGiveZeroSum) {
  BlockShape s{3, 4, 8, 0, ScoreScale::kSequenceLength};
  auto block = make_tf_block<double>(s, HeadCounts{2, 2, 2, 2});
  Rng rng(17);
  oracle::randomize(block.time, rng);
  oracle::randomize(block.freq, rng);
  for (auto& v : block.time.w_out.data()) v = 0.0;
  for (auto& v : block.freq.w_out.data()) v = 0.0;
  auto m = tf_attention_sum(random_tensor({3, 4, 8}, rng), block);
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(TfBlock, MatchesComposedOracles) {
  BlockShape s{3, 4, 8, 0, ScoreScale::kSequenceLength};
  auto block = make_tf_block<double>(s, HeadCounts{2, 4, 2, 2});
  Rng rng(18);
  oracle::randomize(block.time, rng);
  oracle::randomize(block.freq, rng);
  auto x = random_tensor({3, 4, 8}, rng);
  auto sum = ops::add(oracle::time_attention_loops(x, block.time), oracle::freq_attention_loops(x, block.freq));
  EXPECT_LT(oracle::max_abs_diff(oracle::layer_norm_loops(sum), tf_attention_block(x, block)), 1e-6);
}

TEST(TfBlock, SumIsIndependentOfEvaluationOrder) {
  BlockShape s{3, 4, 8, 0, ScoreScale::kSequenceLength};
  auto block = make_tf_block<double>(s, HeadCounts{2, 2, 2, 2});
  Rng rng(19);
  oracle::randomize(block.time, rng);
  oracle::randomize(block.freq, rng);
  auto x = random_tensor({3, 4, 8}, rng);
  auto f = multi_head_freq(x, block.freq);
  auto t = multi_head_time(x, block.time);
  EXPECT_EQ(ops::add(f, t).values(), tf_attention_sum(x, block).values());
}

TEST(FatBlock, DefaultHeadCounts) {
  HeadCounts h;
  EXPECT_EQ(h.time, 8u);
  EXPECT_EQ(h.high_band, 2u);
  EXPECT_EQ(h.low_band, 16u);
  BlockShape s{4, 8, 16, 0, ScoreScale::kSequenceLength};
  auto block = make_fat_block<double>(s, h);
  EXPECT_EQ(block.time.config.heads, 8u);
  EXPECT_EQ(block.high.config.heads, 2u);
  EXPECT_EQ(block.low.config.heads, 16u);
  EXPECT_EQ(block.high.config.table, TableKind::kShared);
  EXPECT_EQ(block.low.config.table, TableKind::kPerRole);
}

TEST(FatBlock, HighBandHasFewerPositionalParameters) {
  BlockShape s{8, 16, 32, 0, ScoreScale::kSequenceLength};
  auto block = make_fat_block<double>(s, HeadCounts{});
  const auto high = count_params(block.high);
  const auto low = count_params(block.low);
  EXPECT_LT(high.positional, low.positional);
  EXPECT_GT(high.positional, 0u);
}

TEST(FatBlock, MatchesComposedOracles) {
  BlockShape s{3, 4, 8, 0, ScoreScale::kSequenceLength};
  auto block = make_fat_block<double>(s, HeadCounts{2, 2, 4, 2});
  Rng rng(20);
  oracle::randomize(block.time, rng);
  oracle::randomize(block.low, rng);
  oracle::randomize(block.high, rng);
  auto x = random_tensor({3, 4, 8}, rng);
  auto banded = band_join(oracle::freq_attention_loops(x, block.low, 0, 2), oracle::freq_attention_loops(x, block.high, 2, 4));
  auto sum = ops::add(oracle::time_attention_loops(x, block.time), banded);
  EXPECT_LT(oracle::max_abs_diff(sum, fat_attention_sum(x, block)), 1e-6);
  EXPECT_LT(oracle::max_abs_diff(oracle::layer_norm_loops(sum), fat_attention_block(x, block)), 1e-6);
}

TEST(FatBlock, ShapePreservedForValidShapes) {
  Rng rng(21);
  for (auto [t, f, d] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{{1, 2, 2}, {2, 6, 4}, {5, 4, 8}}) {
    BlockShape s{t, f, d, 0, ScoreScale::kSequenceLength};
    auto block = make_fat_block<double>(s, HeadCounts{});
    block.init(rng);
    EXPECT_EQ(fat_attention_block(random_tensor({t, f, d}, rng), block).shape(), (Shape{t, f, d}));
  }
  BlockShape odd{2, 5, 4, 0, ScoreScale::kSequenceLength};
  EXPECT_THROW(make_fat_block<double>(odd, HeadCounts{}), ConfigError);
}

TEST(FatBlock, GradientsMatchFiniteDifferences) {
  BlockShape s{2, 4, 4, 0, ScoreScale::kSequenceLength};
  auto block = make_fat_block<double>(s, HeadCounts{2, 2, 2, 2});
  Rng rng(22);
  oracle::randomize(block.time, rng);
  oracle::randomize(block.low, rng);
  oracle::randomize(block.high, rng);
  auto x = random_tensor({2, 4, 4}, rng);
  auto r_out = random_tensor({2, 4, 4}, rng);
  std::vector<Tensor<double>> params{x};
  block.visit("", [&](const std::string&, Tensor<double>& t) { params.push_back(t); });
  auto res = oracle::grad_check([&] { return ops::sum(ops::mul(fat_attention_block(x, block), r_out)); }, params);
  EXPECT_LT(res.max_rel_err, 1e-4);
}

TEST(RelativeAttention, GradientsMatchFiniteDifferences) {
  for (std::size_t span : {0u, 2u}) {
    Rng rng(40 + span);
    const std::size_t b = 2, n = 5, heads = 2, dk = 3, d = heads * dk;
    auto q = random_tensor({b, n, d}, rng), k = random_tensor({b, n, d}, rng), v = random_tensor({b, n, d}, rng);
    auto rq = random_tensor({heads, 2 * n - 1, dk}, rng), rk = random_tensor({heads, 2 * n - 1, dk}, rng);
    auto rv = random_tensor({heads, 2 * n - 1, dk}, rng);
    auto probe = random_tensor({b, n, d}, rng);
    auto res = oracle::grad_check(
        [&] { return ops::sum(ops::mul(relative_attention(q, k, v, rq, rk, rv, heads, 0.5, span), probe)); },
        {q, k, v, rq, rk, rv});
    EXPECT_LT(res.max_rel_err, 1e-4) << "span " << span;
  }
}

TEST(RelativeAttention, SharedTableAccumulatesAllThreeRoles) {
  Rng rng(44);
  auto q = random_tensor({1, 4, 2}, rng), k = random_tensor({1, 4, 2}, rng), v = random_tensor({1, 4, 2}, rng);
  auto r = random_tensor({1, 7, 2}, rng);
  auto probe = random_tensor({1, 4, 2}, rng);
  auto res = oracle::grad_check([&] { return ops::sum(ops::mul(relative_attention(q, k, v, r, r, r, 1, 0.7), probe)); },
                                {q, k, v, r});
  EXPECT_LT(res.max_rel_err, 1e-4);
}

TEST(RelativeAttention, UnitSpanAttendsOnlyToSelf) {
  Rng rng(45);
  const std::size_t n = 4, dk = 2;
  auto q = random_tensor({1, n, dk}, rng), k = random_tensor({1, n, dk}, rng), v = random_tensor({1, n, dk}, rng);
  auto rq = random_tensor({1, 2 * n - 1, dk}, rng), rk = random_tensor({1, 2 * n - 1, dk}, rng);
  auto rv = random_tensor({1, 2 * n - 1, dk}, rng);
  const auto out = relative_attention(q, k, v, rq, rk, rv, 1, 1.0, 1);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < dk; ++c) EXPECT_NEAR(out[p * dk + c], v[p * dk + c] + rv[(n - 1) * dk + c], 1e-12);
}
