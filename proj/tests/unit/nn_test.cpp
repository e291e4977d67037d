#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "dwiz/gradcheck.hpp"
#include "dwiz/nn.hpp"
#include "dwiz/optimizer.hpp"
#include "dwiz/rng.hpp"
#include "test_support.hpp"

namespace dwiz::nn {
namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 0.5) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

template <typename T>
LstmParams<T> random_lstm(std::size_t in, std::size_t hid, Rng& rng) {
  return {random_tensor<T>({in, 4 * hid}, rng), random_tensor<T>({hid, 4 * hid}, rng),
          random_tensor<T>({4 * hid}, rng)};
}

// Straightforward per-element LSTM, written independently of nn.hpp with the
// same accumulation order: bias, then input terms, then recurrent terms.
template <typename T>
std::vector<T> reference_lstm(const std::vector<std::vector<T>>& xs, const LstmParams<T>& p) {
  const std::size_t in = p.input_dim(), hid = p.hidden();
  auto sig = [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  };
  std::vector<T> h(hid, T(0)), c(hid, T(0));
  for (const auto& x : xs) {
    std::vector<T> z(4 * hid);
    for (std::size_t j = 0; j < 4 * hid; ++j) {
      T acc = p.bias[j];
      for (std::size_t k = 0; k < in; ++k)
        if (x[k] != T(0)) acc += x[k] * p.input_weights.at(k, j);
      for (std::size_t k = 0; k < hid; ++k)
        if (h[k] != T(0)) acc += h[k] * p.recurrent_weights.at(k, j);
      z[j] = acc;
    }
    std::vector<T> h_next(hid);
    for (std::size_t k = 0; k < hid; ++k) {
      const T i = sig(z[k]), f = sig(z[hid + k]), g = std::tanh(z[2 * hid + k]), o = sig(z[3 * hid + k]);
      c[k] = f * c[k] + i * g;
      h_next[k] = o * std::tanh(c[k]);
    }
    h = h_next;
  }
  return h;
}

TEST(Embed, LookupAndPad) {
  Rng rng(1);
  EmbeddingTable<float> table{random_tensor<float>({6, 50}, rng)};
  table.zero_pad_row();
  const std::vector<TokenId> pads{0, 0};
  const auto zeros = embed(table, std::span<const TokenId>(pads));
  EXPECT_EQ(zeros.shape(), (std::vector<std::size_t>{2, 50}));
  for (float v : zeros.values()) EXPECT_EQ(v, 0.0f);
  const std::vector<TokenId> three{3};
  const auto row = embed(table, std::span<const TokenId>(three));
  for (std::size_t k = 0; k < 50; ++k) EXPECT_EQ(row.at(0, k), table.weights.at(3, k));
  const std::vector<TokenId> bad{6};
  EXPECT_THROW(embed(table, std::span<const TokenId>(bad)), ShapeError);
}

TEST(Embed, GradientOfSumIsCountPerRow) {
  // d sum(embed([3,3])) / d table = 2 on row 3, checked against differences.
  Rng rng(2);
  EmbeddingTable<double> table{random_tensor<double>({5, 4}, rng)};
  const std::vector<TokenId> ids{3, 3};
  Tensor<double> d_out({2, 4}, 1.0);
  Tensor<double> grad({5, 4});
  embed_backward<double>(ids, d_out, grad);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double saved = table.weights.at(r, k);
      auto total = [&] {
        const auto e = embed(table, std::span<const TokenId>(ids));
        return std::accumulate(e.values().begin(), e.values().end(), 0.0);
      };
      table.weights.at(r, k) = saved + 1e-3;
      const double plus = total();
      table.weights.at(r, k) = saved - 1e-3;
      const double minus = total();
      table.weights.at(r, k) = saved;
      EXPECT_NEAR(grad.at(r, k), (plus - minus) / 2e-3, 1e-9);
      EXPECT_EQ(grad.at(r, k), r == 3 ? 2.0 : 0.0);
    }
  }
  const std::vector<TokenId> with_pad{0, 2};
  Tensor<double> g2({5, 4});
  embed_backward<double>(with_pad, Tensor<double>({2, 4}, 1.0), g2);
  for (double v : g2.row(0)) EXPECT_EQ(v, 0.0);
}

TEST(LstmStep, ZeroEverything) {
  auto p = LstmParams<double>::zeros(3, 2);
  const std::vector<double> x(3, 0.0), h(2, 0.0), c(2, 0.0);
  const auto r = lstm_step<double>(x, h, c, p);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(r.cache.gates[kInputGate * 2 + k], 0.5);
    EXPECT_EQ(r.cache.gates[kForgetGate * 2 + k], 0.5);
    EXPECT_EQ(r.cache.gates[kOutputGate * 2 + k], 0.5);
    EXPECT_EQ(r.cache.gates[kCellGate * 2 + k], 0.0);
    EXPECT_EQ(r.c[k], 0.0);
    EXPECT_EQ(r.h[k], 0.0);
  }
}

TEST(LstmStep, ScalarCellByHand) {
  // 1-d cell: W_x = [0.5, -0.5, 1.0, 2.0], W_h = [0.1, 0.2, 0.3, 0.4],
  // b = [0, 1, 0, -1], x = 1, h_prev = 0.5, c_prev = 0.2.
  // z = [0.55, 0.6, 1.15, 1.2]
  // i = 0.634136, f = 0.645656, g = 0.817754, o = 0.768525
  // c = 0.645656*0.2 + 0.634136*0.817754 = 0.647698
  // h = 0.768525 * tanh(0.647698) = 0.768525 * 0.570119 = 0.438150
  LstmParams<double> p{Tensor<double>({1, 4}, {0.5, -0.5, 1.0, 2.0}), Tensor<double>({1, 4}, {0.1, 0.2, 0.3, 0.4}),
                       Tensor<double>({4}, {0.0, 1.0, 0.0, -1.0})};
  const std::vector<double> x{1.0}, h{0.5}, c{0.2};
  const auto r = lstm_step<double>(x, h, c, p);
  EXPECT_NEAR(r.c[0], 0.647698, 5e-6);
  EXPECT_NEAR(r.h[0], 0.438150, 5e-6);
}

TEST(LstmStep, ForgetSaturationKeepsCell) {
  // forget bias 50 saturates f at 1: c = c_prev + i*g
  auto p = LstmParams<double>::zeros(1, 1);
  p.bias[kForgetGate] = 50.0;
  p.input_weights[kCellGate] = 1.0;
  const std::vector<double> x{0.7}, h{0.0}, c{3.0};
  const auto r = lstm_step<double>(x, h, c, p);
  EXPECT_NEAR(r.c[0], 3.0 + 0.5 * std::tanh(0.7), 1e-12);
}

TEST(LstmStep, ShapeMismatch) {
  auto p = LstmParams<double>::zeros(3, 2);
  const std::vector<double> x(2, 0.0), h(2, 0.0), c(2, 0.0);
  EXPECT_THROW(lstm_step<double>(x, h, c, p), ShapeError);
}

TEST(LstmForward, BaseCaseAndErrors) {
  Rng rng(3);
  const auto p = random_lstm<double>(3, 4, rng);
  Tensor<double> seq = random_tensor<double>({1, 3}, rng);
  const std::vector<double> zero(4, 0.0);
  const auto step = lstm_step<double>(seq.row(0), zero, zero, p);
  EXPECT_EQ(lstm_forward(seq, p).last_hidden, step.h);
  EXPECT_EQ(lstm_last_hidden(seq, p), step.h);
  EXPECT_THROW(lstm_forward(Tensor<double>({0, 3}), p), ShapeError);
  EXPECT_THROW(lstm_forward(Tensor<double>({2, 2}), p), ShapeError);
}

TEST(LstmForward, ZeroInputZeroBiasGivesZero) {
  Rng rng(4);
  auto p = random_lstm<float>(5, 3, rng);
  p.bias.fill(0.0f);
  const auto h = lstm_last_hidden(Tensor<float>({7, 5}), p);
  for (float v : h) EXPECT_EQ(v, 0.0f);
}

TEST(LstmForwardProperty, MatchesReferenceLoopExactly) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t in = 1 + rng.below(6), hid = 1 + rng.below(6), len = 1 + rng.below(8);
    const auto p = random_lstm<float>(in, hid, rng);
    Tensor<float> seq = random_tensor<float>({len, in}, rng, 2.0);
    if (trial % 3 == 0) seq.row(0)[0] = 0.0f;
    std::vector<std::vector<float>> xs;
    for (std::size_t t = 0; t < len; ++t) xs.emplace_back(seq.row(t).begin(), seq.row(t).end());
    EXPECT_EQ(lstm_forward(seq, p).last_hidden, reference_lstm(xs, p));
    EXPECT_EQ(lstm_last_hidden(seq, p), reference_lstm(xs, p));
  }
}

TEST(LstmProperty, OutputsFiniteForBoundedInputs) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = random_lstm<float>(4, 5, rng);
    Tensor<float> seq = random_tensor<float>({6, 4}, rng, 10.0);
    auto fwd = lstm_forward(seq, p);
    for (float v : fwd.last_hidden) EXPECT_TRUE(std::isfinite(v));
    auto g = GradientStore<float>::zeros_like({{"w", &p.input_weights}, {"u", &p.recurrent_weights}, {"b", &p.bias}});
    std::vector<float> up(5, 1.0f);
    const auto dx = lstm_backward<float>(fwd.cache, p, up, {g["w"], g["u"], g["b"]});
    EXPECT_TRUE(dx.all_finite());
    EXPECT_TRUE(g.all_finite());
  }
}

TEST(LstmBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(7);
  const auto p = random_lstm<double>(3, 2, rng);
  const auto fwd = lstm_forward(random_tensor<double>({4, 3}, rng), p);
  auto g = GradientStore<double>::zeros_like({{"w", &p.input_weights}, {"u", &p.recurrent_weights}, {"b", &p.bias}});
  const std::vector<double> up(2, 0.0);
  const auto dx = lstm_backward<double>(fwd.cache, p, up, {g["w"], g["u"], g["b"]});
  EXPECT_EQ(g.global_norm(), 0.0);
  for (double v : dx.values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmBackward, MismatchedCacheRejected) {
  Rng rng(8);
  const auto p = random_lstm<double>(3, 2, rng);
  const auto other = random_lstm<double>(4, 2, rng);
  const auto fwd = lstm_forward(random_tensor<double>({2, 4}, rng), other);
  auto g = GradientStore<double>::zeros_like({{"w", &p.input_weights}, {"u", &p.recurrent_weights}, {"b", &p.bias}});
  const std::vector<double> up(2, 1.0);
  EXPECT_THROW(lstm_backward<double>(fwd.cache, p, up, {g["w"], g["u"], g["b"]}), ShapeError);
}

TEST(LstmBackward, InputGradientMatchesDifferences) {
  Rng rng(9);
  const auto p = random_lstm<double>(3, 4, rng);
  Tensor<double> seq = random_tensor<double>({5, 3}, rng);
  std::vector<double> weights(4);
  for (double& w : weights) w = rng.uniform(-1, 1);
  auto loss = [&] {
    const auto h = lstm_last_hidden(seq, p);
    return std::inner_product(h.begin(), h.end(), weights.begin(), 0.0);
  };
  auto g = GradientStore<double>::zeros_like({{"w", &p.input_weights}, {"u", &p.recurrent_weights}, {"b", &p.bias}});
  const auto dx = lstm_backward<double>(lstm_forward(seq, p).cache, p, weights, {g["w"], g["u"], g["b"]});
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double saved = seq[i];
    seq[i] = saved + 1e-3;
    const double plus = loss();
    seq[i] = saved - 1e-3;
    const double minus = loss();
    seq[i] = saved;
    EXPECT_LT(relative_error(dx[i], (plus - minus) / 2e-3, 1e-6), 1e-4);
  }
}

TEST(DenseSoftmax, UniformAndHandExample) {
  auto p = DenseParams<double>::zeros(4, 42);
  const std::vector<double> h(4, 0.0);
  for (double v : dense_softmax<double>(h, p)) EXPECT_NEAR(v, 1.0 / 42.0, 1e-15);
  const std::vector<double> logits{std::log(2.0), 0.0, 0.0};
  const auto s = softmax<double>(logits);
  EXPECT_NEAR(s[0], 0.5, 1e-12);
  EXPECT_NEAR(s[1], 0.25, 1e-12);
  EXPECT_NEAR(s[2], 0.25, 1e-12);
}

TEST(SoftmaxProperty, NormalizedAndShiftInvariant) {
  Rng rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<float> z(1 + rng.below(60));
    for (float& v : z) v = static_cast<float>(rng.uniform(-30, 30));
    const auto p = softmax<float>(z);
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    EXPECT_NEAR(sum, 1.0, 1e-6);
    for (float v : p) EXPECT_GE(v, 0.0f);
    const float shift = static_cast<float>(rng.uniform(-50, 50));
    std::vector<float> shifted(z);
    for (float& v : shifted) v += shift;
    const auto q = softmax<float>(shifted);
    // z + shift is itself rounded to float (ulp near 80 is 7.6e-6).
    for (std::size_t j = 0; j < p.size(); ++j) EXPECT_NEAR(p[j], q[j], 2e-5);
  }
}

TEST(CrossEntropy, Values) {
  std::vector<double> one_hot(42, 0.0);
  one_hot[5] = 1.0;
  EXPECT_EQ(cross_entropy<double>(one_hot, 5), 0.0);
  const std::vector<double> uniform(42, 1.0 / 42.0);
  EXPECT_NEAR(cross_entropy<double>(uniform, 0), 3.7377, 1e-4);
  EXPECT_NEAR(cross_entropy<double>(one_hot, 0), 27.631, 1e-3);
  EXPECT_TRUE(std::isfinite(cross_entropy<double>(one_hot, 0)));
  EXPECT_THROW(cross_entropy<double>(uniform, 42), InvalidArgument);
  EXPECT_THROW(cross_entropy<double>(uniform, -1), InvalidArgument);
}

TEST(Adam, FirstStepIsUnitStepInLr) {
  // m = 0.1, v = 0.001; bias corrected m_hat = 1, v_hat = 1, so the step is
  // lr * 1 / (1 + 1e-7) ~ 0.1.
  Tensor<double> w({1}, 0.0);
  ParameterRefs<double> params{{"w", &w}};
  auto g = GradientStore<double>::zeros_like({{"w", &w}});
  g["w"][0] = 1.0;
  AdamState<double> state;
  adam_step(params, g, state, AdamConfig{0.1});
  EXPECT_NEAR(w[0], -0.1, 1e-7);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, ZeroGradientAndZeroLrLeaveParameters) {
  Rng rng(11);
  Tensor<float> w = random_tensor<float>({3, 3}, rng);
  const Tensor<float> before = w;
  ParameterRefs<float> params{{"w", &w}};
  auto g = GradientStore<float>::zeros_like({{"w", &w}});
  AdamState<float> state;
  adam_step(params, g, state, AdamConfig{});
  EXPECT_EQ(w, before);
  for (float& v : g["w"].values()) v = static_cast<float>(rng.uniform(-1, 1));
  adam_step(params, g, state, AdamConfig{0.0});
  EXPECT_EQ(w, before);
}

TEST(Adam, DeterministicAndRejectsNonFinite) {
  auto run = [] {
    Rng rng(12);
    Tensor<float> w = random_tensor<float>({4}, rng);
    ParameterRefs<float> params{{"w", &w}};
    auto g = GradientStore<float>::zeros_like({{"w", &w}});
    AdamState<float> state;
    for (int s = 0; s < 10; ++s) {
      for (float& v : g["w"].values()) v = static_cast<float>(rng.uniform(-1, 1));
      adam_step(params, g, state, AdamConfig{});
    }
    return w;
  };
  EXPECT_EQ(run(), run());

  Tensor<float> w({2}, 1.0f);
  ParameterRefs<float> params{{"w", &w}};
  auto g = GradientStore<float>::zeros_like({{"w", &w}});
  g["w"][1] = std::nanf("");
  AdamState<float> state;
  EXPECT_THROW(adam_step(params, g, state, AdamConfig{}), NumericError);
  EXPECT_EQ(w[0], 1.0f);
  EXPECT_EQ(state.step, 0);
}

TEST(GradientStore, ClipAndMatch) {
  Tensor<double> a({2}), b({1});
  auto g = GradientStore<double>::zeros_like({{"a", &a}, {"b", &b}});
  g["a"][0] = 3.0;
  g["a"][1] = 0.0;
  g["b"][0] = 4.0;
  EXPECT_DOUBLE_EQ(g.global_norm(), 5.0);
  EXPECT_DOUBLE_EQ(g.clip_by_global_norm(1.0), 5.0);
  EXPECT_NEAR(g.global_norm(), 1.0, 1e-12);
  EXPECT_NEAR(g["a"][0], 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(g.clip_by_global_norm(10.0), g.global_norm());
  Tensor<double> c({3});
  EXPECT_THROW(g.check_matches({{"a", &a}, {"c", &c}}), ShapeError);
}

TEST(Gradcheck, RelativeErrorDefinition) {
  EXPECT_EQ(relative_error(0.0, 0.0, 1e-6), 0.0);
  EXPECT_NEAR(relative_error(1.0, 1.1, 1e-6), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0, 1e-6), 1e-3);
}

}  // namespace
}  // namespace dwiz::nn
