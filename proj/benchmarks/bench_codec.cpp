#include <numbers>

#include <benchmark/benchmark.h>

#include "invcode/codec.hpp"
#include "invcode/invertible_fn.hpp"
#include "invcode/rng.hpp"

using namespace invcode;

namespace {

VecList draw(int k, int dim, std::uint64_t seed) {
  Rng rng(seed);
  VecList xs;
  for (int i = 0; i < k; ++i) xs.push_back(standard_normal(rng, dim));
  return xs;
}

void BM_IdealEncodeRotation(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const auto f = InvertibleFunction::rotation(std::numbers::pi / 3);
  const auto g = build_generator(k + 1, k, Scheme::Uniform);
  const auto xs = draw(k, 2, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ideal_encode(f, xs, g));
}
BENCHMARK(BM_IdealEncodeRotation)->Arg(2)->Arg(10)->Arg(100);

void BM_IdealEncodeResidual(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const auto f = InvertibleFunction::random_residual(16, 2, 32, 0.9, 3);
  const auto g = build_generator(k + 1, k, Scheme::Uniform);
  const auto xs = draw(k, 16, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ideal_encode(f, xs, g));
}
BENCHMARK(BM_IdealEncodeResidual)->Arg(2)->Arg(10);

void BM_DecodeBatch(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const auto g = build_generator(k + 1, k, Scheme::Uniform);
  const auto values = draw(k + 1, 64, 4);
  std::map<TaskId, Vec> results;
  std::vector<TaskId> subset;
  for (TaskId t = 2; t <= k + 1; ++t) {
    results[t] = values[static_cast<std::size_t>(t - 1)];
    subset.push_back(t);
  }
  for (auto _ : state) benchmark::DoNotOptimize(decode_batch(results, g, subset));
}
BENCHMARK(BM_DecodeBatch)->Arg(2)->Arg(10)->Arg(40)->Arg(100);

void BM_OnlineParityEvent(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const auto g = build_generator(k + 1, k, Scheme::Uniform);
  const auto values = draw(k + 1, 64, 5);
  DecoderState primed(g);
  for (TaskId t = 2; t <= k; ++t) primed.update(t, values[static_cast<std::size_t>(t - 1)]);
  for (auto _ : state) {
    state.PauseTiming();
    DecoderState s = primed;
    state.ResumeTiming();
    s.update(k + 1, values[static_cast<std::size_t>(k)]);
    benchmark::DoNotOptimize(s.estimate(1));
  }
}
BENCHMARK(BM_OnlineParityEvent)->Arg(2)->Arg(10)->Arg(100);

void BM_ResidualInverse(benchmark::State& state) {
  const double lip = static_cast<double>(state.range(0)) / 10.0;
  const auto f = InvertibleFunction::random_residual(16, 2, 32, lip, 6);
  const Vec y = draw(1, 16, 7)[0] * 5.0;
  for (auto _ : state) benchmark::DoNotOptimize(f.inverse(y));
}
BENCHMARK(BM_ResidualInverse)->Arg(5)->Arg(7)->Arg(9);

void BM_CouplingInverse(benchmark::State& state) {
  const auto f = InvertibleFunction::random_coupling(16, 6, 32, 8);
  const Vec y = draw(1, 16, 9)[0];
  for (auto _ : state) benchmark::DoNotOptimize(f.inverse(y));
}
BENCHMARK(BM_CouplingInverse);

}  // namespace

BENCHMARK_MAIN();
