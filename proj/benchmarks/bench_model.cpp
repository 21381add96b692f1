#include <benchmark/benchmark.h>

#include "gft/model.hpp"
#include "gft/random.hpp"

using namespace gft;

namespace {

GftConfig desk(std::vector<double> ratios) {
  GftConfig c;
  c.vit = ViTConfig::desk();
  c.schedule.keep_ratios = std::move(ratios);
  return c;
}

Tensor images(const ViTConfig& vit, std::size_t batch) {
  Rng rng(5);
  Tensor t(Shape{batch, vit.channels, vit.image_size, vit.image_size});
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

// Inference with the default schedule against a no-op schedule.
void BM_GftForward(benchmark::State& state) {
  const auto cfg = state.range(0) ? desk({0.75, 0.5, 0.25}) : desk({1.0, 1.0, 1.0});
  const auto model = make_model(cfg, 1);
  const Tensor x = images(cfg.vit, 32);
  for (auto _ : state) {
    ad::Tape<float> tape;
    benchmark::DoNotOptimize(gft_forward(tape, model, x, nullptr).logits.value().ptr());
  }
  state.SetLabel(state.range(0) ? "pruned" : "no-op schedule");
}
BENCHMARK(BM_GftForward)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto cfg = desk({0.75, 0.5, 0.25});
  const auto model = make_model(cfg, 1);
  auto states = make_states(cfg);
  const Tensor x = images(cfg.vit, 32);
  std::vector<std::size_t> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % cfg.vit.num_classes;
  for (auto _ : state) {
    ad::Tape<float> tape;
    const auto fwd = gft_forward(tape, model, x, &states, ForwardOptions{true, nullptr});
    tape.backward(ad::cross_entropy(fwd.logits, labels));
    benchmark::DoNotOptimize(fwd.params.front().grad().ptr());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
