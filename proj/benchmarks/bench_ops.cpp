#include <benchmark/benchmark.h>

#include "gft/autodiff.hpp"
#include "gft/gala.hpp"
#include "gft/ops.hpp"
#include "gft/random.hpp"

using namespace gft;

namespace {

Tensor normal(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = normal(Shape{n, n}, 1), b = normal(Shape{n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(197)->Arg(256);

// Forward and backward of one attention layer at [B, T, 3d].
void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  const Tensor qkv = normal(Shape{8, tokens, 3 * 64}, 3);
  for (auto _ : state) {
    ad::Tape<float> tape;
    auto x = tape.leaf(qkv);
    auto out = ad::attention(x, 4);
    tape.backward(ad::sum(out.out));
    benchmark::DoNotOptimize(x.grad().ptr());
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(17)->Arg(13)->Arg(9)->Arg(5);

void BM_GalaPipeline(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor scores = normal(Shape{32, 4, n + 1, n + 1}, 4);
  const gala::GalaParams params;
  const Tensor kernel(Shape{params.kernel_size}, 1.0f / static_cast<float>(params.kernel_size));
  std::vector<std::size_t> row(n);
  for (std::size_t i = 0; i < n; ++i) row[i] = i;
  const std::vector<std::vector<std::size_t>> ids(32, row);
  gala::ImportanceState ema(n);
  for (auto _ : state) benchmark::DoNotOptimize(gala::run_pipeline(scores, kernel, ids, params, ema, true));
}
BENCHMARK(BM_GalaPipeline)->Arg(16)->Arg(196);

}  // namespace
