// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hypernetwork MLP mapping an operating point (z, t[, dataset]) to an
// eigendecomposed operator, and the push-forward built on top of it.
//
// Output layout per sample: d_z*d_z entries of the basis residual (row
// major, P = I + residual), then the free eigenvalues in index order with
// masked indices skipped.

#pragma once

#include "cellmnn/data.hpp"
#include "cellmnn/diff.hpp"
#include "cellmnn/linop.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cellmnn {

struct EncoderConfig {
  int depth = 4;     // hidden layers
  int width = 96;
  int dz = 5;
  int n_datasets = 0;  // one-hot conditioning width; 0 = unconditioned
  std::vector<int> zero_mask;
  double leaky_slope = 0.01;
  double out_scale = 0.01;
  /// Time fed to the MLP is t / time_scale; 1 keeps raw grid times.
  double time_scale = 1.0;

  int input_width() const { return dz + 1 + n_datasets; }
  int free_eigenvalues() const { return dz - static_cast<int>(zero_mask.size()); }
  int output_width() const { return dz * dz + free_eigenvalues(); }
  void validate() const;
};

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  Matrix bias;    // 1 x fan_out
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<DenseLayer> layers;

  /// Tensors in optimizer order: W0, b0, W1, b1, ...
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t parameter_count() const;
};

/// Kaiming-normal (fan-in, leaky-ReLU gain) weights, zero biases, last-layer
/// weights multiplied by out_scale.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

/// All-zero weights: P = I, lambda = 0 for every input.
EncoderParams zero_params(const EncoderConfig& config);

/// Builds the MLP input row block [z, t / time_scale, one_hot(idx)].
Matrix encoder_inputs(const EncoderConfig& config, const Matrix& z, double t,
                      std::optional<int> dataset);

/// Raw MLP outputs for a batch of latent rows.
Matrix encoder_forward(const EncoderParams& params, const Matrix& inputs);

EigenOperator decode_operator(const EncoderConfig& config, const Eigen::Ref<const Eigen::RowVectorXd>& raw);

EigenOperator predict_operator(const EncoderParams& params, const Vector& z, double t,
                               std::optional<int> dataset = {});
/// One operator per row of z (all rows share t and dataset).
std::vector<EigenOperator> predict_operators(const EncoderParams& params, const Matrix& z,
                                             double t, std::optional<int> dataset = {});

/// x -> V exp(A(z, t) dt) V^T x with z = V^T x, one operator per call.
Vector push_forward(const EncoderParams& params, const PcaBasis& basis, const Vector& x,
                    double t, double dt, std::optional<int> dataset = {});

/// Latent push of every row of z by dt (single operator per row).
Matrix push_latent_rows(const EncoderParams& params, const Matrix& z, double t, double dt,
                        std::optional<int> dataset = {});

/// States at each target time from (z, t). With relinearize_every = k > 0
/// the operator is re-predicted at every k-th intermediate target;
/// 0 keeps the source operator for all horizons.
std::vector<Vector> rollout(const EncoderParams& params, const Vector& z, double t,
                            std::span<const double> targets, std::optional<int> dataset = {},
                            int relinearize_every = 0);

// -- Differentiable view -----------------------------------------------------

/// Encoder parameters living on a tape as Vars.
class BoundEncoder {
 public:
  /// Creates one leaf per tensor.
  BoundEncoder(diff::Tape& tape, const EncoderParams& params);
  /// Uses caller-provided Vars (same order as EncoderParams::tensors()).
  BoundEncoder(const EncoderConfig& config, std::vector<diff::Var> vars);

  const EncoderConfig& config() const { return config_; }
  const std::vector<diff::Var>& vars() const { return vars_; }
  diff::Tape& tape() const { return *vars_.front().tape(); }

 private:
  EncoderConfig config_;
  std::vector<diff::Var> vars_;
};

/// Per-sample operator pieces on a tape.
struct OperatorNodes {
  std::vector<diff::Var> basis;        // P
  std::vector<diff::Var> basis_inv;    // P^-1
  std::vector<diff::Var> basis_det;    // det(P)
  std::vector<diff::Var> eigenvalues;  // lambda, d_z x 1 with masked zeros
};

OperatorNodes predict_operator_nodes(const BoundEncoder& encoder, const Matrix& z, double t,
                                     std::optional<int> dataset = {});

// -- Serialization -------------------------------------------------------------

/// Weights are written with round-trip precision.
std::string encoder_to_json(const EncoderParams& params);
EncoderParams encoder_from_json(const std::string& text);

}  // namespace cellmnn
