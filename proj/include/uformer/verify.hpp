// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Self-verification suite behind `uformer verify`: gradient checks, attention
// oracles, band partition, STFT/COLA, IRM analytic cases and metric identities.

#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "uformer/attention.hpp"
#include "uformer/metrics.hpp"
#include "uformer/model.hpp"
#include "uformer/oracle.hpp"
#include "uformer/signal.hpp"

namespace uformer {

// Known fault names for negative controls.
inline constexpr const char* kFaultRelTableGrad = "rel-table-grad";

struct VerifyOptions {
  std::string inject_fault;  // empty or kFaultRelTableGrad
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Check {
  std::string name;
  std::string description;
  std::function<CheckResult(const VerifyOptions&)> run;
};

namespace verify_detail {

using oracle::grad_check;
using oracle::random_tensor;

inline CheckResult result(const std::string& name, bool ok, std::string detail) {
  return {name, ok, std::move(detail), 0.0};
}

// Scalar probe sum(y * R) with a fixed random R, so every output element matters.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, random_tensor(y.shape(), rng)));
}

// Uniform values kept at least `gap` away from zero (keeps relu/prelu kinks out of FD reach).
inline Tensor<double> away_from_zero(Shape shape, Rng& rng, double gap = 0.05) {
  Tensor<double> t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) v = v < 0 ? v - gap : v + gap;
  return t;
}

struct OpCase {
  std::string name;
  std::function<Tensor<double>()> loss;
  std::vector<Tensor<double>> inputs;
};

inline std::vector<OpCase> op_cases() {
  Rng rng(2024);
  std::vector<OpCase> cases;
  auto add_unary = [&](const std::string& name, auto fn, Tensor<double> x) {
    cases.push_back({name, [fn, x] { return probe(fn(x), 1); }, {x}});
  };
  add_unary("relu", [](const Tensor<double>& x) { return ops::relu(x); }, away_from_zero({3, 4}, rng));
  add_unary("sigmoid", [](const Tensor<double>& x) { return ops::sigmoid(x); }, random_tensor({3, 4}, rng, -3, 3));
  add_unary("tanh", [](const Tensor<double>& x) { return ops::tanh(x); }, random_tensor({3, 4}, rng, -2, 2));
  add_unary("log1p", [](const Tensor<double>& x) { return ops::log1p(x); }, random_tensor({3, 4}, rng, 0.0, 3.0));
  add_unary("square", [](const Tensor<double>& x) { return ops::square(x); }, random_tensor({3, 4}, rng));
  add_unary("scale", [](const Tensor<double>& x) { return ops::scale(x, 0.37); }, random_tensor({3, 4}, rng));
  add_unary("sum", [](const Tensor<double>& x) { return ops::scale(ops::sum(x), 1.5); }, random_tensor({3, 4}, rng));
  add_unary("mean", [](const Tensor<double>& x) { return ops::scale(ops::mean(x), 2.0); }, random_tensor({3, 4}, rng));
  add_unary("reshape", [](const Tensor<double>& x) { return ops::reshape(x, {2, 6}); }, random_tensor({3, 4}, rng));
  add_unary("permute", [](const Tensor<double>& x) { return ops::permute(x, {2, 0, 1}); }, random_tensor({2, 3, 4}, rng));
  add_unary("transpose", [](const Tensor<double>& x) { return ops::transpose(x); }, random_tensor({2, 3, 4}, rng));
  add_unary("slice", [](const Tensor<double>& x) { return ops::slice(x, 1, 1, 3); }, random_tensor({2, 4, 3}, rng));
  add_unary("select", [](const Tensor<double>& x) { return ops::select(x, 0, 1); }, random_tensor({3, 2, 2}, rng));
  add_unary("softmax", [](const Tensor<double>& x) { return ops::softmax(x, 1); }, random_tensor({2, 5, 3}, rng, -2, 2));
  add_unary("rel_shift", [](const Tensor<double>& x) { return ops::rel_shift(x); }, random_tensor({2, 4, 7}, rng));
  add_unary("rel_shift_flip", [](const Tensor<double>& x) { return ops::rel_shift(x, true); }, random_tensor({2, 4, 7}, rng));
  add_unary("rel_unshift", [](const Tensor<double>& x) { return ops::rel_unshift(x); }, random_tensor({2, 4, 4}, rng));

  auto add_binary = [&](const std::string& name, auto fn, Tensor<double> a, Tensor<double> b) {
    cases.push_back({name, [fn, a, b] { return probe(fn(a, b), 2); }, {a, b}});
  };
  add_binary("add", [](const auto& a, const auto& b) { return ops::add(a, b); }, random_tensor({3, 4}, rng), random_tensor({4}, rng));
  add_binary("mul", [](const auto& a, const auto& b) { return ops::mul(a, b); }, random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng));
  add_binary("sub", [](const auto& a, const auto& b) { return ops::sub(a, b); }, random_tensor({3, 4}, rng), random_tensor({3, 4}, rng));
  add_binary("matmul", [](const auto& a, const auto& b) { return ops::matmul(a, b); }, random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng));
  add_binary("prelu", [](const auto& a, const auto& b) { return ops::prelu(a, b, 0); }, away_from_zero({3, 2, 2}, rng), random_tensor({3}, rng, 0.0, 0.5));
  add_binary("concat", [](const auto& a, const auto& b) { return ops::concat<double>({a, b}, 1); }, random_tensor({2, 3}, rng), random_tensor({2, 2}, rng));
  add_binary("stack", [](const auto& a, const auto& b) { return ops::stack<double>({a, b}); }, random_tensor({2, 3}, rng), random_tensor({2, 3}, rng));

  {
    Tensor<double> x = random_tensor({2, 3, 5}, rng), g = random_tensor({5}, rng, 0.5, 1.5), b = random_tensor({5}, rng);
    cases.push_back({"layer_norm", [x, g, b] { return probe(ops::layer_norm(x, g, b), 3); }, {x, g, b}});
  }
  {
    Tensor<double> x = random_tensor({2, 4, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    cases.push_back({"conv2d", [x, k, b] { return probe(ops::conv2d(x, k, b), 4); }, {x, k, b}});
  }
  for (std::size_t span : {std::size_t{0}, std::size_t{2}}) {
    const std::size_t n = 4, heads = 2, dk = 2;
    Tensor<double> q = random_tensor({2, n, heads * dk}, rng), k = random_tensor({2, n, heads * dk}, rng);
    Tensor<double> v = random_tensor({2, n, heads * dk}, rng);
    Tensor<double> rq = random_tensor({heads, 2 * n - 1, dk}, rng), rk = random_tensor({heads, 2 * n - 1, dk}, rng);
    Tensor<double> rv = random_tensor({heads, 2 * n - 1, dk}, rng);
    cases.push_back({span ? "relative_attention_span" : "relative_attention",
                     [=] { return probe(relative_attention(q, k, v, rq, rk, rv, heads, 0.5, span), 5); },
                     {q, k, v, rq, rk, rv}});
  }
  {
    // One table in all three roles, as in high-band attention.
    const std::size_t n = 3;
    Tensor<double> q = random_tensor({1, n, 2}, rng), k = random_tensor({1, n, 2}, rng), v = random_tensor({1, n, 2}, rng);
    Tensor<double> r = random_tensor({1, 2 * n - 1, 2}, rng);
    cases.push_back({"relative_attention_shared",
                     [=] { return probe(relative_attention(q, k, v, r, r, r, 1, 0.7), 6); }, {q, k, v, r}});
  }
  {
    nn::Gru<double> gru(3, 2);
    gru.init(rng);
    gru.visit("", [&](const std::string&, Tensor<double>& t) {
      for (auto& x : t.data()) x += rng.uniform(-0.2, 0.2);
    });
    Tensor<double> x = random_tensor({4, 2, 3}, rng);
    std::vector<Tensor<double>> in{x};
    gru.visit("", [&](const std::string&, Tensor<double>& t) { in.push_back(t); });
    cases.push_back({"gru_sequence", [gru, x] { return probe(gru.sequence(x), 7); }, in});
  }
  return cases;
}

inline CheckResult op_gradients(const VerifyOptions&) {
  double worst = 0.0;
  std::string worst_op, failed;
  for (auto& c : op_cases()) {
    const auto r = grad_check(c.loss, c.inputs);
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_op = c.name;
    }
    if (!(r.max_rel_err < 1e-4)) failed += (failed.empty() ? "" : ", ") + c.name;
  }
  return result("op-gradients", failed.empty(),
                failed.empty() ? detail::concat("max rel err ", worst, " (", worst_op, ") < 1e-4")
                               : "rel err >= 1e-4 in: " + failed);
}

inline Tensor<double> random_magnitude(const ModelConfig& cfg, Rng& rng) {
  return random_tensor({cfg.frames, cfg.bins}, rng, 0.05, 2.0);
}

inline CheckResult model_gradients(const VerifyOptions&) {
  std::string detail_text;
  bool ok = true;
  for (auto v : {Variant::kTf, Variant::kFat}) {
    const auto cfg = ModelConfig::toy(v);
    auto model = init_params<double>(cfg, 3);
    Rng rng(4);
    model.visit([&](const std::string&, Tensor<double>& t) {
      for (auto& x : t.data()) x += rng.uniform(-0.1, 0.1);
    });
    const auto mag = random_magnitude(cfg, rng);
    const auto target = random_tensor({cfg.frames, cfg.bins}, rng, 0.0, 1.0);
    std::vector<Tensor<double>> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    auto loss = [&] { return ops::mean(ops::square(ops::sub(ops::mul(model.forward(mag), mag), ops::mul(target, mag)))); };
    const auto r = grad_check(loss, params, 40, 11);
    ok = ok && r.max_rel_err < 1e-3 && r.checked >= 20;
    detail_text += detail::concat(detail_text.empty() ? "" : "; ", variant_name(v), ": ", r.checked,
                                  " params, max rel err ", r.max_rel_err);
  }
  return result("model-gradients", ok, detail_text + " (limit 1e-3)");
}

inline CheckResult rel_table_gradients(const VerifyOptions& opt) {
  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.d_layer = 4;
  cfg.length = 5;
  AxialAttention<double> att(cfg);
  Rng rng(31);
  oracle::randomize(att, rng);
  const Tensor<double> x = random_tensor({3, cfg.length, cfg.d_layer}, rng);
  const std::vector<Tensor<double>> tables{att.query_table(), att.key_table(), att.value_table()};
  std::function<void()> corrupt;
  if (opt.inject_fault == kFaultRelTableGrad) {
    corrupt = [t = att.key_table()]() mutable {
      for (auto& g : t.grad()) g = g * 1.5 + 0.01;
    };
  }
  const auto r = grad_check([&] { return probe(axial_attention(x, att), 8); }, tables, 0, 1, 1e-5, corrupt);
  return result("rel-table-grad", r.max_rel_err < 1e-4,
                detail::concat(r.checked, " table entries, max rel err ", r.max_rel_err, " (limit 1e-4)"));
}

inline CheckResult attention_zero_tables(const VerifyOptions&) {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(100 + s);
    AttentionConfig cfg;
    cfg.heads = 1;
    cfg.d_layer = 3;
    cfg.length = 4 + s % 3;
    AxialAttention<double> att(cfg);
    att.init(rng);
    const Tensor<double> x = random_tensor({1, cfg.length, cfg.d_layer}, rng);
    const Tensor<double> x2 = ops::reshape(x, {cfg.length, cfg.d_layer});
    const auto q = ops::matmul(x2, att.w_query), k = ops::matmul(x2, att.w_key), v = ops::matmul(x2, att.w_value);
    const auto expect = ops::matmul(scaled_dot_product(q, k, v), att.w_out);
    worst = std::max(worst, oracle::max_abs_diff(ops::reshape(axial_attention(x, att), expect.shape()), expect));
  }
  return result("attention-zero-tables", worst < 1e-6, detail::concat("10 instances, max |diff| ", worst, " (limit 1e-6)"));
}

inline CheckResult attention_oracle(const VerifyOptions&) {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 12; ++s) {
    Rng rng(200 + s);
    AttentionConfig cfg;
    cfg.heads = 1 + s % 3;
    cfg.d_layer = 2 * cfg.heads;
    cfg.length = 3 + s % 4;
    cfg.table = s % 2 ? TableKind::kShared : TableKind::kPerRole;
    cfg.scale = s % 4 < 2 ? ScoreScale::kSequenceLength : ScoreScale::kHeadDim;
    AxialAttention<double> att(cfg);
    oracle::randomize(att, rng);
    const Tensor<double> x = random_tensor({cfg.length, cfg.d_layer}, rng);
    const auto expect = oracle::position_attention_loops(oracle::to_mat(x), att);
    worst = std::max(worst, oracle::max_abs_diff(expect, axial_attention(x, att)));
  }
  return result("attention-oracle", worst < 1e-6, detail::concat("12 instances, max |diff| ", worst, " (limit 1e-6)"));
}

inline CheckResult fat_structure(const VerifyOptions&) {
  const BlockShape shape{4, 16, 32, 0, ScoreScale::kSequenceLength};
  auto block = make_fat_block<double>(shape, HeadCounts{8, 8, 16, 2});
  const auto low = count_params(block.low), high = count_params(block.high);
  Rng rng(5);
  const Tensor<double> x = random_tensor({4, 16, 32}, rng);
  block.low.init(rng);
  block.high.init(rng);
  block.time.init(rng);
  const bool shape_ok = fat_attention_block(x, block).shape() == x.shape();
  const auto [a, b] = band_split(x);
  const bool partition_ok = band_join(a, b).values() == x.values() && a.shape()[1] + b.shape()[1] == 16;
  const bool ok = low.total() > high.total() && shape_ok && partition_ok;
  return result("fat-structure", ok,
                detail::concat("LFA ", low.positional, "+", low.projection, " vs HFA ", high.positional, "+",
                               high.projection, " params; block shape ", shape_ok ? "kept" : "CHANGED",
                               "; band split ", partition_ok ? "bit-exact" : "NOT exact"));
}

inline CheckResult stft_roundtrip(const VerifyOptions&) {
  const StftConfig cfg;
  Rng rng(9);
  Waveform w;
  w.samples.resize(16000 + 123);
  for (auto& s : w.samples) s = rng.uniform(-0.5, 0.5);
  const Waveform back = istft(stft(w, cfg), cfg);
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    sig += w.samples[i] * w.samples[i];
    err += (w.samples[i] - back.samples[i]) * (w.samples[i] - back.samples[i]);
  }
  const double snr = 10.0 * std::log10(sig / std::max(err, 1e-300));
  const double cola = cola_deviation(cfg);
  const bool ok = back.size() == w.size() && snr > 50.0 && cola < 1e-10;
  return result("stft-roundtrip", ok, detail::concat("round-trip SNR ", snr, " dB (> 50), COLA deviation ", cola, " (< 1e-10)"));
}

inline CheckResult irm_cases(const VerifyOptions&) {
  const Tensor<double> s({3}, std::vector<double>{1.0, 1.0, 1.0});
  const Tensor<double> n({3}, std::vector<double>{1.0, 0.0, std::sqrt(3.0)});
  const auto m = compute_irm(s, n);
  const double e1 = std::abs(m[0] - std::sqrt(0.5)), e2 = std::abs(m[1] - 1.0), e3 = std::abs(m[2] - 0.5);
  const bool ok = e1 < 1e-9 && e2 < 1e-9 && e3 < 1e-9;
  return result("irm-analytic", ok, detail::concat("errors ", e1, ", ", e2, ", ", e3, " (limit 1e-9)"));
}

inline CheckResult metric_identity(const VerifyOptions&) {
  Rng rng(12);
  Waveform w;
  w.samples.resize(24000);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    w.samples[i] = 0.4 * std::sin(2 * std::numbers::pi * 440.0 * t) * (0.6 + 0.4 * std::sin(2 * std::numbers::pi * 3.0 * t)) +
                   0.05 * rng.normal();
  }
  const double s = stoi(w, w), f = fwsnrseg(w, w);
  const bool ok = std::abs(s - 1.0) < 1e-6 && std::abs(f - 35.0) < 1e-9;
  return result("metric-identity", ok, detail::concat("STOI(x, x) = ", s, ", fwSNRseg(x, x) = ", f, " dB"));
}

}  // namespace verify_detail

inline std::vector<Check> verify_checks() {
  using namespace verify_detail;
  return {
      {"op-gradients", "finite-difference gradients of every differentiable op", op_gradients},
      {"model-gradients", "finite-difference gradients of the toy TF and FAT models", model_gradients},
      {"rel-table-grad", "finite-difference gradients of the relative position tables", rel_table_gradients},
      {"attention-zero-tables", "zero tables reduce to scaled dot-product attention", attention_zero_tables},
      {"attention-oracle", "position-sensitive attention matches a loop oracle", attention_oracle},
      {"fat-structure", "band parameter counts, bit-exact band split, shape-preserving block", fat_structure},
      {"stft-roundtrip", "STFT/iSTFT reconstruction and constant overlap-add", stft_roundtrip},
      {"irm-analytic", "ideal ratio mask closed-form cases", irm_cases},
      {"metric-identity", "STOI and fwSNRseg of a signal against itself", metric_identity},
  };
}

inline std::vector<CheckResult> run_verify(const VerifyOptions& opt = {}) {
  if (!opt.inject_fault.empty() && opt.inject_fault != kFaultRelTableGrad) {
    throw ConfigError("verify: unknown fault '" + opt.inject_fault + "' (known: " + kFaultRelTableGrad + ")");
  }
  std::vector<CheckResult> out;
  for (const auto& c : verify_checks()) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = c.run(opt);
    } catch (const std::exception& e) {
      r = {c.name, false, std::string("threw: ") + e.what(), 0.0};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace uformer
