// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cellmnn/linop.hpp"

#include <span>
#include <vector>

namespace cellmnn {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

struct AdamWState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// Zeroed moments shaped like `params`.
AdamWState adamw_init(std::span<const Matrix* const> params);

/// One AdamW update with decoupled decay: w <- w (1 - lr wd), then the
/// bias-corrected Adam step.
void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamWState& state,
                const AdamWConfig& cfg);

/// Rescales grads in place so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::span<Matrix> grads, double max_norm);

}  // namespace cellmnn
