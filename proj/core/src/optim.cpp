// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/optim.hpp"

#include "cellmnn/error.hpp"

#include <cmath>

namespace cellmnn {

AdamWState adamw_init(std::span<const Matrix* const> params) {
  AdamWState s;
  for (const Matrix* p : params) {
    s.m.push_back(Matrix::Zero(p->rows(), p->cols()));
    s.v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamWState& state,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adamw_step: parameter, gradient and state counts differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& w = *params[k];
    const Matrix& g = grads[k];
    if (g.rows() != w.rows() || g.cols() != w.cols())
      throw ShapeError("adamw_step: gradient " + std::to_string(k) + " does not match its parameter");
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    if (cfg.weight_decay != 0.0) w *= 1.0 - cfg.lr * cfg.weight_decay;
    w.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

double clip_global_norm(std::span<Matrix> grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0)
    for (Matrix& g : grads) g *= max_norm / norm;
  return norm;
}

}  // namespace cellmnn
