// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/data.hpp"
#include "cellmnn/losses.hpp"
#include "cellmnn/optim.hpp"

#include <benchmark/benchmark.h>

#include <utility>

using namespace cellmnn;

namespace {

LatentMarginals fixture(int dz) {
  Matrix a = Matrix::Zero(dz, dz);
  for (int i = 0; i < dz; ++i) a(i, i) = -0.2;
  a(0, dz - 1) = 0.4;
  const auto s = synth_linear_snapshots(a, mixture_sampler({Vector::Ones(dz)}, 0.3), TimeGrid({0, 1, 2, 3, 4}),
                                        1000, Matrix::Identity(dz, dz), 0.0, 5);
  PcaBasis identity;
  identity.v = Matrix::Identity(dz, dz);
  return project_marginals(s.data, identity);
}

// One full optimizer step: batch draw, forward, backward, AdamW update.
void BM_TrainStep(benchmark::State& state) {
  const int dz = static_cast<int>(state.range(1));
  EncoderConfig ecfg;
  ecfg.dz = dz;
  const LatentMarginals m = fixture(dz);
  EncoderParams params = init_params(ecfg, 1);
  BatchSampler sampler(m, 2);
  LossConfig loss;
  AdamWConfig opt;
  AdamWState adam = adamw_init(std::as_const(params).tensors());
  for (auto _ : state) {
    diff::Tape tape;
    BoundEncoder bound(tape, params);
    const BatchPlan plan = plan_batches(m, 2.0, state.range(0), loss, sampler);
    const LossTerms terms = total_loss(bound, plan, loss);
    tape.backward(terms.total);
    std::vector<Matrix> grads;
    for (const auto& v : bound.vars()) grads.push_back(v.grad());
    adamw_step(params.tensors(), grads, adam, opt);
    benchmark::DoNotOptimize(terms.total.scalar());
  }
}
BENCHMARK(BM_TrainStep)->Args({50, 2})->Args({200, 2})->Args({200, 5})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
