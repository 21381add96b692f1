#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gft/autodiff.hpp"
#include "gft/fault_injection.hpp"
#include "oracles.hpp"

using namespace gft;
using V = ad::Var<double>;

namespace {

using Builder = std::function<V(ad::Tape<double>&, const std::vector<V>&)>;

struct ProbeResult {
  std::size_t probes = 0;
  double max_rel = 0.0;
};

/// Loss = Σ op(inputs) ⊙ W with a fixed random W. Compares the tape's
/// gradient against central differences of the forward value at random
/// coordinates of every input.
ProbeResult probe_op(const std::vector<Tensor64>& inputs, const Builder& build, std::size_t min_probes = 60,
                     std::uint64_t seed = 11) {
  Rng rng(seed);
  Tensor64 weight;
  auto forward = [&](const std::vector<Tensor64>& xs, ad::Tape<double>& tape, std::vector<V>& vars) {
    vars.clear();
    for (const auto& x : xs) vars.push_back(tape.leaf(x));
    V out = build(tape, vars);
    if (weight.empty()) weight = oracle::random_tensor<double>(out.shape(), rng);
    return out;
  };
  auto loss_value = [&](const std::vector<Tensor64>& xs) {
    ad::Tape<double> tape;
    std::vector<V> vars;
    V out = forward(xs, tape, vars);
    long double total = 0;
    for (std::size_t i = 0; i < out.value().numel(); ++i) total += out.value()[i] * weight[i];
    return static_cast<double>(total);
  };

  ad::Tape<double> tape;
  std::vector<V> vars;
  V out = forward(inputs, tape, vars);
  V loss = ad::sum(ad::mul(out, tape.constant(weight)));
  tape.backward(loss);

  ProbeResult r;
  const double h = 1e-6;
  const std::size_t per_input = (min_probes + inputs.size() - 1) / inputs.size();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t p = 0; p < per_input; ++p) {
      const std::size_t i = rng.index(inputs[k].numel());
      auto xs = inputs;
      xs[k][i] += h;
      const double up = loss_value(xs);
      xs[k][i] -= 2 * h;
      const double down = loss_value(xs);
      const double numeric = (up - down) / (2 * h);
      const double analytic = vars[k].grad()[i];
      // Below the floor, central differences are dominated by roundoff.
      const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-4});
      r.max_rel = std::max(r.max_rel, std::fabs(numeric - analytic) / denom);
      ++r.probes;
    }
  }
  return r;
}

Tensor64 rnd(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return oracle::random_tensor<double>(std::move(s), rng, scale);
}

void expect_passes(const ProbeResult& r) {
  EXPECT_GE(r.probes, 50u);
  EXPECT_LT(r.max_rel, 1e-4);
}

}  // namespace

// ---- primitive gradients vs finite differences ----

TEST(AutodiffGradTest, Add) {
  expect_passes(probe_op({rnd({3, 4}, 1), rnd({3, 4}, 2)},
                         [](auto&, const std::vector<V>& v) { return ad::add(v[0], v[1]); }));
}

TEST(AutodiffGradTest, Mul) {
  expect_passes(probe_op({rnd({3, 4}, 1), rnd({3, 4}, 2)},
                         [](auto&, const std::vector<V>& v) { return ad::mul(v[0], v[1]); }));
}

TEST(AutodiffGradTest, ScaleAndReshape) {
  expect_passes(probe_op({rnd({2, 6}, 3)}, [](auto&, const std::vector<V>& v) {
    return ad::reshape(ad::scale(v[0], -2.5), Shape{3, 4});
  }));
}

TEST(AutodiffGradTest, Sum) {
  expect_passes(probe_op({rnd({5, 3}, 4)}, [](auto&, const std::vector<V>& v) { return ad::sum(v[0]); }));
}

TEST(AutodiffGradTest, Matmul) {
  expect_passes(probe_op({rnd({4, 5}, 5), rnd({5, 3}, 6)},
                         [](auto&, const std::vector<V>& v) { return ad::matmul(v[0], v[1]); }));
}

TEST(AutodiffGradTest, Linear) {
  expect_passes(probe_op({rnd({2, 3, 5}, 7), rnd({5, 4}, 8), rnd({4}, 9)},
                         [](auto&, const std::vector<V>& v) { return ad::linear(v[0], v[1], v[2]); }));
}

TEST(AutodiffGradTest, LayerNorm) {
  expect_passes(probe_op({rnd({3, 7}, 10, 2.0), rnd({7}, 11), rnd({7}, 12)},
                         [](auto&, const std::vector<V>& v) { return ad::layer_norm(v[0], v[1], v[2], 1e-6); }));
}

TEST(AutodiffGradTest, Gelu) {
  expect_passes(probe_op({rnd({4, 6}, 13, 2.0)}, [](auto&, const std::vector<V>& v) { return ad::gelu(v[0]); }));
}

TEST(AutodiffGradTest, Attention) {
  expect_passes(probe_op({rnd({2, 5, 3 * 8}, 14)},
                         [](auto&, const std::vector<V>& v) { return ad::attention(v[0], 2).out; }, 90));
}

TEST(AutodiffGradTest, PrependToken) {
  expect_passes(probe_op({rnd({2, 3, 4}, 15), rnd({4}, 16)},
                         [](auto&, const std::vector<V>& v) { return ad::prepend_token(v[0], v[1]); }));
}

TEST(AutodiffGradTest, AddRows) {
  expect_passes(probe_op({rnd({2, 3, 4}, 17), rnd({3, 4}, 18)},
                         [](auto&, const std::vector<V>& v) { return ad::add_rows(v[0], v[1]); }));
}

TEST(AutodiffGradTest, GatherRows) {
  const std::vector<std::vector<std::size_t>> rows{{0, 2, 3}, {0, 1, 4}};
  expect_passes(probe_op({rnd({2, 5, 3}, 19)},
                         [&](auto&, const std::vector<V>& v) { return ad::gather_rows(v[0], rows); }));
}

TEST(AutodiffGradTest, TakeRow) {
  expect_passes(probe_op({rnd({3, 4, 5}, 20)}, [](auto&, const std::vector<V>& v) { return ad::take_row(v[0], 2); }));
}

TEST(AutodiffGradTest, CrossEntropy) {
  expect_passes(probe_op({rnd({4, 5}, 21, 3.0)}, [](auto&, const std::vector<V>& v) {
    return ad::cross_entropy(v[0], {0, 4, 2, 2});
  }));
}

// ---- tape mechanics ----

TEST(TapeTest, DiamondAccumulatesAndVisitsOnce) {
  ad::Tape<double> tape;
  V x = tape.leaf(Tensor64::from({1.5, -2.0}));
  V a = ad::mul(x, x);
  V b = ad::scale(x, 3.0);
  V c = ad::add(a, b);
  V loss = ad::sum(c);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2 * -2.0 + 3.0);
  // x is a leaf; the four recorded ops each run their rule once.
  EXPECT_EQ(tape.backward_visits(), 4u);
}

TEST(TapeTest, UnreachableNodesAreSkipped) {
  ad::Tape<double> tape;
  V x = tape.leaf(Tensor64::from({1.0}));
  V unused = ad::scale(x, 5.0);
  V loss = ad::sum(ad::scale(x, 2.0));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(tape.backward_visits(), 2u);
  EXPECT_DOUBLE_EQ(unused.grad()[0], 0.0);
}

TEST(TapeTest, SameInputTwice) {
  ad::Tape<double> tape;
  V x = tape.leaf(Tensor64::from({4.0}));
  tape.backward(ad::sum(ad::add(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(TapeTest, ConstantsGetNoGradient) {
  ad::Tape<double> tape;
  V x = tape.leaf(Tensor64::from({4.0}));
  V c = tape.constant(Tensor64::from({3.0}));
  tape.backward(ad::sum(ad::mul(x, c)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_FALSE(tape.requires_grad(c.id()));
}

TEST(TapeTest, NonScalarLossThrows) {
  ad::Tape<double> tape;
  V x = tape.leaf(Tensor64::from({1.0, 2.0}));
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
}

TEST(TapeTest, GradShapeMatchesValue) {
  ad::Tape<double> tape;
  V w = tape.leaf(rnd({3, 2}, 1));
  V x = tape.leaf(rnd({4, 3}, 2));
  tape.backward(ad::sum(ad::matmul(x, w)));
  EXPECT_EQ(w.grad().shape(), w.shape());
  EXPECT_EQ(x.grad().shape(), x.shape());
}

TEST(GatherRowsTest, DroppedRowsGetExactlyZeroGradient) {
  ad::Tape<double> tape;
  V x = tape.leaf(rnd({2, 4, 3}, 5));
  V g = ad::gather_rows(x, {{0, 3}, {1, 2}});
  tape.backward(ad::sum(ad::mul(g, tape.constant(rnd({2, 2, 3}, 6)))));
  const auto& grad = x.grad();
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(grad.at({0, 1, d}), 0.0);
    EXPECT_EQ(grad.at({0, 2, d}), 0.0);
    EXPECT_EQ(grad.at({1, 0, d}), 0.0);
    EXPECT_EQ(grad.at({1, 3, d}), 0.0);
    EXPECT_NE(grad.at({0, 3, d}), 0.0);
  }
}

TEST(AttentionTest, ProbabilitiesAreSoftmaxOfScores) {
  ad::Tape<double> tape;
  auto a = ad::attention(tape.leaf(rnd({1, 4, 6}, 7)), 2);
  ASSERT_EQ(a.scores.shape(), (Shape{1, 2, 4, 4}));
  for (std::size_t row = 0; row < 8; ++row) {
    double total = 0.0;
    long double peak = a.scores[row * 4];
    for (std::size_t j = 0; j < 4; ++j) peak = std::max<long double>(peak, a.scores[row * 4 + j]);
    long double z = 0;
    for (std::size_t j = 0; j < 4; ++j) z += std::exp(a.scores[row * 4 + j] - peak);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(a.probs[row * 4 + j], static_cast<double>(std::exp(a.scores[row * 4 + j] - peak) / z), 1e-12);
      total += a.probs[row * 4 + j];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(CrossEntropyTest, UniformLogitsGiveLogC) {
  ad::Tape<double> tape;
  V loss = ad::cross_entropy(tape.leaf(Tensor64(Shape{3, 5})), {0, 1, 4});
  EXPECT_NEAR(loss.value()[0], std::log(5.0), 1e-12);
  EXPECT_THROW(ad::cross_entropy(tape.leaf(Tensor64(Shape{1, 5})), {5}), std::invalid_argument);
}

TEST(FaultInjectionTest, CorruptedRuleIsDetected) {
  const auto inputs = std::vector<Tensor64>{rnd({3, 7}, 10, 2.0), rnd({7}, 11), rnd({7}, 12)};
  auto build = [](auto&, const std::vector<V>& v) { return ad::layer_norm(v[0], v[1], v[2], 1e-6); };
  {
    gft::testing::ScopedBackwardFault fault(gft::testing::BackwardFault::layer_norm_gain);
    EXPECT_GT(probe_op(inputs, build).max_rel, 1e-2);
  }
  EXPECT_LT(probe_op(inputs, build).max_rel, 1e-4);
}
