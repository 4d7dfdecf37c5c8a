// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Held-out marginal scoring: exact EMD, streamed MMD, Sinkhorn couplings and
// the two non-learned baselines.

#pragma once

#include "cellmnn/data.hpp"
#include "cellmnn/emd.hpp"
#include "cellmnn/encoder.hpp"
#include "cellmnn/losses.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cellmnn {

/// Pairwise Euclidean distances between the rows of xs and ys.
Matrix euclidean_cost(const Matrix& xs, const Matrix& ys);

/// Transport plan between two clouds; uniform weights unless given.
TransportPlan exact_transport(const Matrix& xs, const Matrix& ys, const std::optional<Vector>& wx = {},
                              const std::optional<Vector>& wy = {});

/// Exact 1-Wasserstein distance with Euclidean ground cost.
double emd_exact(const Matrix& xs, const Matrix& ys, const std::optional<Vector>& wx = {},
                 const std::optional<Vector>& wy = {});

struct MmdOptions {
  Index block = 512;
  int threads = 1;
  /// Deterministic subsample cap per side; 0 uses every point.
  Index max_points = 0;
  std::uint64_t seed = 0;
};

/// Laplacian-kernel MMD^2 computed by row blocks with a fixed reduction
/// order; never holds more than one block x block tile of the Gram matrix.
double mmd_metric(const Matrix& xs, const Matrix& ys, const LossConfig& cfg, const MmdOptions& opts = {});

struct SinkhornResult {
  Matrix coupling;
  double cost = 0.0;            // <coupling, C>
  double marginal_error = 0.0;  // L1 error of the row and column sums
  int iterations = 0;
  bool converged = false;
};

/// Log-domain Sinkhorn for the Euclidean cost with uniform marginals.
SinkhornResult sinkhorn_coupling(const Matrix& xs, const Matrix& ys, double reg, int max_iter = 1000,
                                 double tol = 1e-9);

struct BaselineOptions {
  /// Above this many points per side Sinkhorn replaces the exact coupling.
  Index exact_limit = 2000;
  /// Sinkhorn regularization as a multiple of the median cost.
  double sinkhorn_scale = 0.05;
  /// Output size; 0 emits as many points as the earlier marginal.
  Index n_out = 0;
  std::uint64_t seed = 0;
};

/// Displacement interpolation between the marginals neighbouring heldout,
/// sampling pairs proportionally to the coupling mass.
Matrix ot_interpolate_baseline(const LatentMarginals& marginals, double heldout,
                               const BaselineOptions& opts = {});

/// The preceding observed marginal, unchanged.
Matrix persistence_baseline(const LatentMarginals& marginals, double heldout);

/// Interpolation fraction of heldout between its grid neighbours.
double interpolation_alpha(const TimeGrid& grid, double heldout);

enum class EvalMode { Emd, Mmd };

struct EvalOptions {
  EvalMode mode = EvalMode::Emd;
  /// Push from the first grid time with rollout instead of the preceding
  /// observed marginal.
  bool from_start = false;
  int relinearize_every = 0;
  MmdOptions mmd;
  LossConfig loss;
};

struct EvalEntry {
  int dataset = 0;
  double heldout_t = 0.0;
  std::uint64_t seed = 0;
  std::string method;
  std::string metric;
  double score = 0.0;
};

/// Latent prediction of the held-out marginal by the encoder.
Matrix predict_heldout(const EncoderParams& params, const LatentMarginals& marginals, double heldout,
                       const EvalOptions& opts = {});

/// Score of a point cloud against the held-out marginal.
double score_prediction(const Matrix& predicted, const Matrix& truth, const EvalOptions& opts);

EvalEntry evaluate_heldout(const EncoderParams& params, const LatentMarginals& marginals, double heldout,
                           const EvalOptions& opts = {});

struct EvalSummary {
  std::string method;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  /// Axis the standard deviation is taken over, written into the header.
  std::string std_axis = "heldout_t,seed";
  std::vector<EvalEntry> entries;

  /// Mean and sample standard deviation per (method, metric).
  std::vector<EvalSummary> summary() const;
  std::string to_csv() const;
  std::string to_json() const;
};

}  // namespace cellmnn
