#include <benchmark/benchmark.h>

#include <vector>

#include "fgc/evaluate.hpp"
#include "fgc/train.hpp"

using namespace fgc;

namespace {

TrainConfig bench_config(int degree) {
  TrainConfig c;
  c.batch_size = 16;
  c.degree = degree;
  c.iterations = 10;
  return c;
}

SweepConfig bench_sweep() {
  SweepConfig c;
  c.stop.min_errors = ~std::uint64_t{0};
  c.stop.max_bits = 64 * 64;
  c.stop.blocks_per_round = 64;
  return c;
}

void BM_BatchGradientSerial(benchmark::State& state) {
  const Trainer t(bench_config(static_cast<int>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(t.batch_gradient_serial(0).loss);
}

void BM_BatchGradientParallel(benchmark::State& state) {
  const Trainer t(bench_config(static_cast<int>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(t.batch_gradient(0).loss);
}

void BM_SweepSerial(benchmark::State& state) {
  const auto det = Detector::ffg(ChannelSpec::reference(), 10);
  const std::vector<double> grid{10.0};
  const auto cfg = bench_sweep();
  for (auto _ : state) benchmark::DoNotOptimize(ber_sweep_serial(det, grid, cfg)[0].errors);
}

void BM_SweepParallel(benchmark::State& state) {
  const auto det = Detector::ffg(ChannelSpec::reference(), 10);
  const std::vector<double> grid{10.0};
  const auto cfg = bench_sweep();
  for (auto _ : state) benchmark::DoNotOptimize(ber_sweep(det, grid, cfg)[0].errors);
}

}  // namespace

BENCHMARK(BM_BatchGradientSerial)->Arg(3)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradientParallel)->Arg(3)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SweepSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SweepParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
