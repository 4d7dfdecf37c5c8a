// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/encoder.hpp"
#include "cellmnn/linop.hpp"
#include "cellmnn/rng.hpp"

#include <benchmark/benchmark.h>

using namespace cellmnn;

namespace {

EigenOperator random_operator(int d) {
  Rng rng(1);
  EigenOperator op;
  op.basis = Matrix::Identity(d, d);
  for (Index k = 0; k < op.basis.size(); ++k) op.basis.data()[k] += 0.1 * rng.normal();
  op.eigenvalues = Vector(d);
  for (int i = 0; i < d; ++i) op.eigenvalues[i] = -0.5 + 0.1 * i;
  return op;
}

void BM_FactoredEvolve(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const FactoredOperator op(random_operator(d));
  const Vector z = Vector::Ones(d);
  for (auto _ : state) benchmark::DoNotOptimize(op.evolve(z, 0.7));
}
BENCHMARK(BM_FactoredEvolve)->Arg(2)->Arg(5)->Arg(10)->Arg(20);

// Includes the factorization of P.
void BM_EvolveFromEigenpairs(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const EigenOperator op = random_operator(d);
  const Vector z = Vector::Ones(d);
  for (auto _ : state) benchmark::DoNotOptimize(evolve(op, z, 0.7));
}
BENCHMARK(BM_EvolveFromEigenpairs)->Arg(2)->Arg(5)->Arg(10)->Arg(20);

void BM_PushLatentRows(benchmark::State& state) {
  EncoderConfig cfg;
  cfg.dz = 5;
  const EncoderParams params = init_params(cfg, 3);
  Rng rng(2);
  Matrix z(state.range(0), cfg.dz);
  for (Index k = 0; k < z.size(); ++k) z.data()[k] = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(push_latent_rows(params, z, 0.0, 1.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PushLatentRows)->Arg(200)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
