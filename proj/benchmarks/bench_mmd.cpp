// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/eval.hpp"
#include "cellmnn/losses.hpp"
#include "cellmnn/rng.hpp"

#include <benchmark/benchmark.h>

using namespace cellmnn;

namespace {

Matrix cloud(Index n, Index d, std::uint64_t seed, double shift) {
  Rng rng(seed);
  Matrix x(n, d);
  for (Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal() + shift;
  return x;
}

void BM_Mmd2Laplacian(benchmark::State& state) {
  const Matrix x = cloud(state.range(0), 5, 1, 0.0), y = cloud(state.range(0), 5, 2, 0.3);
  const LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(mmd2_laplacian(x, y, cfg));
}
BENCHMARK(BM_Mmd2Laplacian)->Arg(200)->Arg(1000)->Unit(benchmark::kMicrosecond);

void BM_Mmd2Graph(benchmark::State& state) {
  const Matrix x = cloud(state.range(0), 5, 1, 0.0), y = cloud(state.range(0), 5, 2, 0.3);
  const LossConfig cfg;
  for (auto _ : state) {
    diff::Tape tape;
    const diff::Var loss = mmd2_graph(tape.leaf(x), tape.constant(y), cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.scalar());
  }
}
BENCHMARK(BM_Mmd2Graph)->Arg(200)->Unit(benchmark::kMicrosecond);

void BM_MmdMetricBlocked(benchmark::State& state) {
  const Matrix x = cloud(state.range(0), 5, 1, 0.0), y = cloud(state.range(0), 5, 2, 0.3);
  MmdOptions opts;
  opts.threads = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(mmd_metric(x, y, LossConfig{}, opts));
}
BENCHMARK(BM_MmdMetricBlocked)->Args({4000, 1})->Args({4000, 2})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
