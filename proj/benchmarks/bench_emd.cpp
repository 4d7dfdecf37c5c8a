// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/eval.hpp"
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

void BM_EmdExact(benchmark::State& state) {
  const Matrix x = cloud(state.range(0), 2, 1, 0.0), y = cloud(state.range(0), 2, 2, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(emd_exact(x, y));
}
BENCHMARK(BM_EmdExact)->Arg(100)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Sinkhorn(benchmark::State& state) {
  const Matrix x = cloud(state.range(0), 2, 1, 0.0), y = cloud(state.range(0), 2, 2, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(sinkhorn_coupling(x, y, 0.05, 1000, 1e-6).cost);
}
BENCHMARK(BM_Sinkhorn)->Arg(200)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
