// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense 64-bit matrices.
//
// A Tape records every operation in creation order, which is a valid
// topological order of the expression DAG; backward() walks it once in
// reverse. Scalars are 1x1 and vectors are n x 1 matrices. Values are held
// by the tape; Var is a lightweight handle.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cellmnn::diff {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 Var.
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct Node {
  std::string op;
  Matrix value;
  Matrix grad;
  std::vector<int> parents;
  // Adds this node's grad contribution into its parents' grads.
  std::function<void(Tape&, const Node&)> backward;
  bool requires_grad = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Matrix value);
  /// Non-differentiable input.
  Var constant(Matrix value);
  Var constant(double value);

  /// Reverse pass from a scalar output. Every node that requires a gradient
  /// gets a grad of its own shape. A second call without zero_grad() throws
  /// unless `accumulate` is set, in which case gradients add up.
  void backward(const Var& output, bool accumulate = false);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  // Used by op implementations.
  Var push(std::string op, Matrix value, std::vector<int> parents,
           std::function<void(Tape&, const Node&)> backward);
  /// grad(id) += delta
  void accumulate(int id, const Matrix& delta);
  Matrix& grad_ref(int id);
  bool needs_grad(int id) const { return node(id).requires_grad; }

 private:
  std::deque<Node> nodes_;
  bool has_run_ = false;
};

// -- Supported operations --------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Sum of same-shaped operands.
Var add_n(std::span<const Var> terms);
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
/// Matrix times column vector.
Var matvec(const Var& a, const Var& v);
Var transpose(const Var& a);
Var exp(const Var& a);
/// max(x, slope*x) elementwise.
Var leaky_relu(const Var& a, double slope = 0.01);
/// Sum of |entries| as a scalar. d|x|/dx at x == 0 is taken as 0.
Var l1_norm(const Var& a);
/// Sum of squared entries as a scalar.
Var l2_norm_sq(const Var& a);
Var det(const Var& a);
Var inverse(const Var& a);
/// Inverse and determinant from one LU factorization.
std::pair<Var, Var> inverse_and_det(const Var& a);
/// max(x, c) elementwise; gradient flows where x > c.
Var max_const(const Var& a, double c);
Var mean(const Var& a);
Var sum(const Var& a);
Var cwise_mul(const Var& a, const Var& b);
Var abs(const Var& a);
Var reciprocal(const Var& a);

// Structural operations.
Var block(const Var& a, Index row, Index col, Index rows, Index cols);
/// Row-major reshape.
Var reshape(const Var& a, Index rows, Index cols);
/// Adds a 1 x c row to every row of an r x c matrix.
Var bias_add(const Var& a, const Var& row);
/// Stacks column vectors (each d x 1) as the rows of an n x d matrix.
Var rows_from(std::span<const Var> columns);
/// D[i, j] = sum_k |X[i, k] - Y[j, k]| for point sets stored by rows.
Var pairwise_l1(const Var& x, const Var& y);

// -- Gradient checking -----------------------------------------------------

using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckEntry {
  std::size_t input = 0;
  Index row = 0;
  Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool pass = true;
};

/// Compares reverse-mode gradients of `fn` with central differences of
/// step h, entry by entry. The relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// Failures are reported, never thrown.
GradCheckReport grad_check(const GraphFn& fn, std::span<const Matrix> inputs,
                           double h, double tol, double floor = 1e-4);

}  // namespace cellmnn::diff
