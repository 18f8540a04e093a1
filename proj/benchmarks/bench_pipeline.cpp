#include <benchmark/benchmark.h>

#include <random>

#include "ude/ude.hpp"

using namespace ude;

namespace {

std::vector<double> noisy_sine(std::size_t n, std::uint64_t seed) {
  PeriodicParams p;
  p.noise = 0.1;
  return gen_periodic(p, n, seed).channels[0];
}

ModelConfig bench_model() {
  ModelConfig m;
  m.delay = {32, 1, 8, 8};
  m.lookback = 256;
  m.encoder.horizon = 32;
  m.encoder.dropout = 0.0;
  return m;
}

PersistenceDiagram random_diagram(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  PersistenceDiagram d;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = u(rng);
    d.features.push_back({1, b, b + u(rng)});
  }
  return d;
}

}  // namespace

static void BM_Hankel(benchmark::State& state) {
  const auto x = noisy_sine(static_cast<std::size_t>(state.range(0)), 1);
  const DelayConfig cfg{32, 1, 8, 8};
  for (auto _ : state) benchmark::DoNotOptimize(embed_series(x, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Hankel)->Arg(512)->Arg(4096)->Arg(32768);

static void BM_Rips(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud cloud;
  for (int i = 0; i < state.range(0); ++i) {
    Vector p(8);
    for (auto& v : p) v = g(rng);
    cloud.points.push_back(p);
  }
  for (auto _ : state) benchmark::DoNotOptimize(rips_persistence(cloud));
}
BENCHMARK(BM_Rips)->Arg(8)->Arg(25)->Arg(50);

static void BM_Wasserstein(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_diagram(rng, n);
  const auto b = random_diagram(rng, n);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein(a, b));
}
BENCHMARK(BM_Wasserstein)->Arg(4)->Arg(16)->Arg(64);

static void BM_EncoderForward(benchmark::State& state) {
  const EncoderModel model(bench_model());
  const auto x = noisy_sine(256, 4);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_EncoderForward);

static void BM_EncoderForwardBackward(benchmark::State& state) {
  const EncoderModel model(bench_model());
  const auto x = noisy_sine(288, 5);
  const PatchGrid grid = embed_series(std::span<const double>(x).first(256), model.config().delay);
  const Vector target = Eigen::Map<const Vector>(x.data() + 256, 32);
  Gradients g = model.zero_gradients();
  Tape tape;
  for (auto _ : state) {
    const Vector y = forward(grid, model, tape);
    backward(model, tape, mse_loss(y, target).grad, g);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_EncoderForwardBackward);
BENCHMARK_MAIN();
