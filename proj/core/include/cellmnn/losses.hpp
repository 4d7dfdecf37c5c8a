// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: Laplacian-kernel MMD between pushed and observed
// marginals, kinetic energy of the local dynamics, and a basis
// invertibility penalty.

#pragma once

#include "cellmnn/data.hpp"
#include "cellmnn/diff.hpp"
#include "cellmnn/encoder.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace cellmnn {

struct LossConfig {
  double sigma = 1.0;
  double eps_kernel = 1e-8;
  double gamma = 0.1;
  double lambda_kin = 0.1;
  double lambda_inv = 1.0;
  double eps_inv = 1e-8;
  /// Keep the t' = t term of the discounted sum (it has zero gradient).
  bool include_self_term = true;
  /// gamma^(t' - t) instead of gamma^t'.
  bool discount_by_lag = false;
  /// U-statistic MMD (diagonal terms dropped) instead of the V-statistic.
  bool unbiased_mmd = false;
  /// 1 / (det(P) + eps) instead of 1 / (|det(P)| + eps).
  bool signed_inverse_penalty = false;

  void validate() const;
};

/// exp(-max(||a - b||_1, eps) / (sigma d_z)); d_z is the vector length.
double laplacian_kernel(const Vector& a, const Vector& b, double sigma, double eps);

using KernelFn = std::function<double(const Vector&, const Vector&)>;

KernelFn laplacian(const LossConfig& cfg);
/// k_x(x, x') = k_z(V^T x, V^T x').
KernelFn pullback_kernel(const PcaBasis& basis, const LossConfig& cfg);

/// MMD^2 between the row sets of xs and ys. Throws ConfigError on empty input.
double mmd2(const Matrix& xs, const Matrix& ys, const KernelFn& kernel, bool unbiased = false);

/// Mean Laplacian-kernel value over all pairs (x_i, y_j).
double laplacian_gram_mean(const Matrix& xs, const Matrix& ys, const LossConfig& cfg);
double mmd2_laplacian(const Matrix& xs, const Matrix& ys, const LossConfig& cfg);

/// Differentiable MMD^2 for point sets stored by rows. Constant inputs are
/// folded into constants.
diff::Var mmd2_graph(const diff::Var& xs, const diff::Var& ys, const LossConfig& cfg);

// -- Batch plans -------------------------------------------------------------

/// Pre-drawn batches for one loss evaluation; the loss is a deterministic
/// function of the encoder given a plan.
struct BatchPlan {
  struct Target {
    double t = 0.0;
    Matrix y;  // fresh batch from mu_t', latent rows
  };
  struct Source {
    double t = 0.0;
    Matrix z;  // batch from mu_t, latent rows
    std::vector<Target> targets;
  };
  std::vector<Source> sources;
  std::optional<int> dataset;
};

/// Non-held-out grid times that have at least one admissible target.
std::vector<double> usable_sources(const TimeGrid& grid, std::optional<double> heldout,
                                   const LossConfig& cfg);

/// Draws one batch per usable source and one fresh batch per (source,
/// target) pair. The held-out time never appears. Throws ConfigError when
/// fewer than two non-held-out times remain.
BatchPlan plan_batches(const LatentMarginals& marginals, std::optional<double> heldout,
                       Index batch, const LossConfig& cfg, BatchSampler& sampler);

// -- Loss terms -----------------------------------------------------------------

struct PushedBatch {
  double source_t = 0.0;
  double target_t = 0.0;
  diff::Var states;                   // B x d_z
  std::vector<diff::Var> velocities;  // A_i z_i(t'), d_z x 1 each
};

struct MarginalMatching {
  diff::Var loss;
  std::vector<OperatorNodes> operators;  // one entry per source
  std::vector<PushedBatch> pushed;
};

/// E_t [ sum_{t' >= t} gamma^t' MMD^2(pushed mu_t, mu_t') ], averaged
/// uniformly over the plan's sources.
MarginalMatching marginal_matching_loss(const BoundEncoder& encoder, const BatchPlan& plan,
                                        const LossConfig& cfg);

/// Mean ||A z||^2 over every pushed state.
diff::Var kinetic_loss(const MarginalMatching& matching);
/// Mean 1 / (|det P| + eps) (signed variant behind the config flag).
diff::Var invertibility_loss(std::span<const diff::Var> dets, const LossConfig& cfg);

struct LossTerms {
  diff::Var mmd;
  diff::Var kinetic;
  diff::Var inverse;
  diff::Var total;
  std::vector<double> basis_dets;
};

LossTerms total_loss(const BoundEncoder& encoder, const BatchPlan& plan, const LossConfig& cfg);

// Plain evaluations, used as references and for reporting.
double kinetic_loss(std::span<const EigenOperator> ops, const Matrix& states);
double invertibility_loss(std::span<const EigenOperator> ops, const LossConfig& cfg);

}  // namespace cellmnn
