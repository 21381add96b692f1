#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "gft/gala.hpp"
#include "gft/ops.hpp"
#include "gft/pps.hpp"
#include "oracles.hpp"

using namespace gft;

namespace {

std::vector<std::vector<std::size_t>> identity_ids(std::size_t batch, std::size_t n) {
  std::vector<std::size_t> row(n);
  std::iota(row.begin(), row.end(), std::size_t{0});
  return std::vector<std::vector<std::size_t>>(batch, row);
}

Tensor box_kernel(std::size_t k) { return Tensor(Shape{k}, 1.0f / static_cast<float>(k)); }

}  // namespace

// ---- spatial gradient stencil ----

TEST(SpatialGradientTest, HandVectors) {
  EXPECT_EQ(gala::spatial_gradient(Tensor::from({1, 2, 3})), Tensor::from({1, 1, 1}));
  EXPECT_EQ(gala::spatial_gradient(Tensor::from({0, 1, 0, 0})), Tensor::from({1, 0, -0.5f, 0}));
}

TEST(SpatialGradientTest, TwoPositionsUseOneSidedDifferences) {
  EXPECT_EQ(gala::spatial_gradient(Tensor::from({2, 5})), Tensor::from({3, 3}));
  EXPECT_THROW(gala::spatial_gradient(Tensor::from({2})), std::invalid_argument);
}

TEST(SpatialGradientTest, MatchesStencilOracleRowWise) {
  Rng rng(1);
  auto x = oracle::random_tensor<double>(Shape{3, 2, 9}, rng);
  auto g = gala::spatial_gradient(x);
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<long double> row(x.ptr() + r * 9, x.ptr() + r * 9 + 9);
    auto ref = oracle::stencil(row);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(g[r * 9 + i], static_cast<double>(ref[i]), 1e-15);
  }
}

TEST(SpatialGradientTest, ExactOnQuadraticsAtInteriorPoints) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), c = rng.uniform(-2, 2);
    const std::size_t n = 4 + rng.index(30);
    Tensor64 x(Shape{n});
    for (std::size_t i = 0; i < n; ++i) x[i] = a * i * i + b * i + c;
    auto g = gala::spatial_gradient(x);
    for (std::size_t i = 1; i + 1 < n; ++i) EXPECT_NEAR(g[i], 2 * a * i + b, 1e-6) << "i=" << i;
  }
}

// ---- mean attention ----

TEST(MeanAttentionTest, RowMeansWithoutClassRow) {
  Tensor s(Shape{1, 1, 3, 3}, std::vector<float>{9, 9, 9, 1, 2, 3, 0, 0, 6});
  EXPECT_EQ(gala::mean_attention(s), Tensor(Shape{1, 1, 2}, std::vector<float>{2, 2}));
}

TEST(MeanAttentionTest, PostSoftmaxInputDegenerates) {
  Rng rng(3);
  auto scores = oracle::random_tensor<float>(Shape{2, 4, 17, 17}, rng, 3.0);
  auto probs = ops::softmax(scores, 3);
  auto degenerate = gala::importance_scores(probs);
  for (float v : degenerate.data()) EXPECT_LT(std::fabs(v), 1e-6f);
  auto live = gala::importance_scores(scores);
  EXPECT_GT(*std::max_element(live.data().begin(), live.data().end()), 0.1f);
}

TEST(AggregateHeadsTest, MeanOfAbsoluteValues) {
  Tensor g(Shape{1, 2, 3}, std::vector<float>{1, -2, 3, -3, 2, 1});
  EXPECT_EQ(gala::aggregate_heads(g), Tensor(Shape{1, 3}, std::vector<float>{2, 2, 2}));
}

// ---- distribution contract ----

TEST(ImportanceDistributionTest, RowsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto scores = oracle::random_tensor<float>(Shape{3, 16}, rng, rng.uniform(0.1, 20));
    const double tau = rng.uniform(0.05, 5.0);
    auto d = gala::importance_distribution(scores, tau, identity_ids(3, 16));
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_GE(d.probs[r * 16 + i], 0.0f);
        total += d.probs[r * 16 + i];
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(ImportanceDistributionTest, LowerTemperatureNeverLowersArgmaxMass) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto scores = oracle::random_tensor<float>(Shape{1, 12}, rng, 2.0);
    const double hot = rng.uniform(0.1, 5.0);
    const double cold = hot * rng.uniform(0.05, 1.0);
    const auto argmax = static_cast<std::size_t>(
        std::max_element(scores.data().begin(), scores.data().end()) - scores.data().begin());
    auto p_hot = gala::importance_distribution(scores, hot, identity_ids(1, 12));
    auto p_cold = gala::importance_distribution(scores, cold, identity_ids(1, 12));
    EXPECT_GE(p_cold.probs[argmax], p_hot.probs[argmax]) << "hot=" << hot << " cold=" << cold;
  }
}

TEST(ImportanceDistributionTest, RejectsBadTemperatureAndMisalignedIds) {
  Tensor s(Shape{1, 3});
  EXPECT_THROW(gala::importance_distribution(s, 0.0, identity_ids(1, 3)), std::invalid_argument);
  EXPECT_THROW(gala::importance_distribution(s, 1.0, identity_ids(1, 4)), std::invalid_argument);
}

// ---- invariances ----

TEST(InvarianceTest, ShiftingMeanAttentionLeavesScoresBitIdentical) {
  // Dyadic values keep every sum exact, so equality must be bitwise.
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor mean(Shape{2, 4, 16});
    for (auto& v : mean.data()) v = static_cast<float>(static_cast<int>(rng.index(512)) - 256) / 64.0f;
    const float c = static_cast<float>(static_cast<int>(rng.index(2048)) - 1024) / 8.0f;
    Tensor shifted = mean;
    for (auto& v : shifted.data()) v += c;
    auto base = gala::aggregate_heads(gala::spatial_gradient(mean));
    auto moved = gala::aggregate_heads(gala::spatial_gradient(shifted));
    EXPECT_TRUE(oracle::bit_equal(base, moved)) << "c=" << c;
  }
}

TEST(InvarianceTest, ShiftingScoresChangesImportanceOnlyByRounding) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto scores = oracle::random_tensor<float>(Shape{1, 2, 17, 17}, rng);
    const float c = static_cast<float>(rng.uniform(-10, 10));
    Tensor shifted = scores;
    for (auto& v : shifted.data()) v += c;
    auto a = gala::importance_scores(scores);
    auto b = gala::importance_scores(shifted);
    // Each shifted mean is rounded once to float: a few ulps of |c| + |Ā|.
    const double ulp = std::ldexp(1.0, -23) * (std::fabs(c) + 4.0);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 4 * ulp);
  }
}

TEST(InvarianceTest, PositiveScalingKeepsEveryStageTopkSet) {
  Rng rng(8);
  const gala::GalaParams params;
  const Tensor kernel = box_kernel(params.kernel_size);
  for (int trial = 0; trial < 100; ++trial) {
    auto scores = oracle::random_tensor<float>(Shape{2, 4, 17, 17}, rng);
    const double lambda = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    Tensor scaled = scores;
    for (auto& v : scaled.data()) v = static_cast<float>(v * lambda);
    gala::ImportanceState s1(16), s2(16);
    auto t1 = gala::run_pipeline(scores, kernel, identity_ids(2, 16), params, s1, false);
    auto t2 = gala::run_pipeline(scaled, kernel, identity_ids(2, 16), params, s2, false);
    for (double k : {0.75, 0.5, 0.25}) {
      const std::size_t keep = pps::keep_count(k, 16);
      for (std::size_t b = 0; b < 2; ++b) {
        auto row1 = std::span<const float>(t1.distribution.probs.ptr() + b * 16, 16);
        auto row2 = std::span<const float>(t2.distribution.probs.ptr() + b * 16, 16);
        EXPECT_EQ(ops::topk_indices(row1, keep), ops::topk_indices(row2, keep)) << "lambda=" << lambda << " k=" << k;
      }
    }
  }
}

// ---- smoothing / normalization ----

TEST(SmoothTest, BoxKernelAveragesNeighbors) {
  auto y = gala::smooth(Tensor(Shape{1, 4}, std::vector<float>{3, 0, 0, 3}), box_kernel(3));
  EXPECT_FLOAT_EQ(y[0], 1.0f);
  EXPECT_FLOAT_EQ(y[1], 1.0f);
  EXPECT_FLOAT_EQ(y[2], 1.0f);
  EXPECT_FLOAT_EQ(y[3], 1.0f);
}

TEST(ZNormalizeTest, ZeroMeanUnitStd) {
  Rng rng(9);
  auto x = oracle::random_tensor<float>(Shape{3, 10}, rng, 4.0);
  auto z = gala::z_normalize(x, 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 10; ++i) m += z[r * 10 + i];
    m /= 10;
    for (std::size_t i = 0; i < 10; ++i) v += (z[r * 10 + i] - m) * (z[r * 10 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(v / 10), 1.0, 1e-5);
  }
}

TEST(ZNormalizeTest, ConstantRowBecomesZero) {
  auto z = gala::z_normalize(Tensor(Shape{1, 3}, 7.0f), 1e-6);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
}

// ---- EMA ----

TEST(EmaTest, FirstSightCopiesThenBlends) {
  const gala::GalaParams params;  // β = 0.9
  const double eps = params.norm_epsilon;
  gala::ImportanceState state(3);
  // Rows {-1, 1}: mean 0, std 1, so z = ±1/(1+ε).
  Tensor s1(Shape{2, 2}, std::vector<float>{-1, 1, -1, 1});
  const std::vector<std::vector<std::size_t>> ids{{0, 1}, {1, 2}};
  const double z = 1.0 / (1.0 + eps);
  auto out1 = gala::ema_update(state, s1, ids, params, true);
  EXPECT_EQ(state.step_count, 1u);
  EXPECT_FLOAT_EQ(state.ema[0], static_cast<float>(-z));
  EXPECT_FLOAT_EQ(state.ema[1], 0.0f);  // batch mean of +z and -z
  EXPECT_FLOAT_EQ(state.ema[2], static_cast<float>(z));
  EXPECT_NEAR(out1.at({0, 1}), 0.9 * 0.0 + 0.1 * z, 1e-7);
  EXPECT_NEAR(out1.at({1, 0}), 0.9 * 0.0 - 0.1 * z, 1e-7);

  Tensor s2(Shape{1, 2}, std::vector<float>{3, 1});  // z = {+z, -z}
  auto out2 = gala::ema_update(state, s2, {{0, 1}}, params, true);
  EXPECT_EQ(state.step_count, 2u);
  EXPECT_NEAR(state.ema[0], 0.9 * -z + 0.1 * z, 1e-7);
  EXPECT_NEAR(state.ema[1], 0.9 * 0.0 - 0.1 * z, 1e-7);
  EXPECT_FLOAT_EQ(state.ema[2], static_cast<float>(z));  // absent: untouched
  EXPECT_NEAR(out2[0], 0.9 * state.ema[0] + 0.1 * z, 1e-7);
}

TEST(EmaTest, EvaluationModeReadsNothingAndWritesNothing) {
  const gala::GalaParams params;
  gala::ImportanceState state(2);
  gala::ema_update(state, Tensor(Shape{1, 2}, std::vector<float>{0, 4}), {{0, 1}}, params, true);
  const gala::ImportanceState before = state;
  auto out = gala::ema_update(state, Tensor(Shape{1, 2}, std::vector<float>{5, 1}), {{0, 1}}, params, false);
  EXPECT_EQ(state, before);
  EXPECT_EQ(out, gala::z_normalize(Tensor(Shape{1, 2}, std::vector<float>{5, 1}), params.norm_epsilon));
}

TEST(EmaTest, RejectsMisalignedOrOutOfRangeIds) {
  const gala::GalaParams params;
  gala::ImportanceState state(2);
  EXPECT_THROW(gala::ema_update(state, Tensor(Shape{1, 2}), {{0, 2}}, params, true), std::invalid_argument);
  EXPECT_THROW(gala::ema_update(state, Tensor(Shape{1, 2}), {{0}}, params, true), std::invalid_argument);
  EXPECT_THROW(gala::ema_update(state, Tensor(Shape{2, 2}), {{0, 1}}, params, true), std::invalid_argument);
}

TEST(GalaParamsTest, Validation) {
  gala::GalaParams p;
  EXPECT_NO_THROW(p.validate());
  p.kernel_size = 2;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.temperature = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.ema_decay = 1.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(PipelineTest, TraceStagesCompose) {
  Rng rng(10);
  const gala::GalaParams params;
  auto scores = oracle::random_tensor<float>(Shape{2, 4, 9, 9}, rng);
  gala::ImportanceState state(8);
  auto t = gala::run_pipeline(scores, box_kernel(3), identity_ids(2, 8), params, state, false);
  EXPECT_EQ(t.mean, gala::mean_attention(scores));
  EXPECT_EQ(t.gradient, gala::spatial_gradient(t.mean));
  EXPECT_EQ(t.aggregated, gala::aggregate_heads(t.gradient));
  EXPECT_EQ(t.smoothed, gala::smooth(t.aggregated, box_kernel(3)));
  EXPECT_EQ(t.blended, gala::z_normalize(t.smoothed, params.norm_epsilon));
  EXPECT_TRUE(state.empty());
}
