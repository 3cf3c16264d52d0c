#include <benchmark/benchmark.h>

#include <random>

#include "unmix/engine.hpp"
#include "unmix/ops.hpp"

using namespace unmix;

namespace {

Tensor random(Shape shape, Rng& rng, bool grad = false) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = g(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(1);
  auto a = random({n, n}, rng), b = random({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = state.range(0);
  Rng rng(2);
  auto x = random({128, c, 32, 32}, rng), w = random({c * 2, c, 3, 3}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, 2, 1).data().data());
}
BENCHMARK(BM_Conv2dForward)->Arg(3)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = state.range(0);
  Rng rng(3);
  auto x = random({128, c, 32, 32}, rng, true), w = random({c * 2, c, 3, 3}, rng, true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    sum(conv2d(x, w, 2, 1)).backward();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(3)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  RunConfig cfg;
  cfg.optim.warmup_steps = 0;
  cfg.loss.mode = state.range(0) ? LossMode::Combined : LossMode::OriginalOnly;
  auto data = std::make_shared<LabeledDataset>(make_synthetic(cfg.data.synthetic));
  Trainer trainer(cfg, data, 1000);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step().total);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
