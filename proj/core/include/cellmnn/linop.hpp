// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Eigendecomposed linear operators A = P diag(lambda) P^-1 and their
// closed-form time evolution, plus two independent numerical oracles.

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <vector>

namespace cellmnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Below this |det(P)| an operator is refused at assembly.
inline constexpr double kSingularBasisThreshold = 1e-12;

struct EigenOperator {
  Matrix basis;          // P, d x d
  Vector eigenvalues;    // lambda, length d
  std::vector<int> zero_mask;  // indices of lambda pinned to 0

  int dim() const { return static_cast<int>(eigenvalues.size()); }
};

/// An operator with its basis inverse precomputed. Construction costs one
/// O(d^3) factorization; evolve() is O(d^2) afterwards.
class FactoredOperator {
 public:
  /// Throws SingularBasisError when |det(P)| < kSingularBasisThreshold and
  /// ConfigError when shapes disagree or a masked eigenvalue is nonzero.
  explicit FactoredOperator(const EigenOperator& op);

  /// P diag(exp(lambda dt)) P^-1 z
  Vector evolve(const Vector& z, double dt) const;
  /// A z
  Vector velocity(const Vector& z) const;
  Matrix assemble() const;

  double basis_det() const { return basis_det_; }
  const Matrix& basis() const { return basis_; }
  const Matrix& basis_inverse() const { return basis_inv_; }
  const Vector& eigenvalues() const { return eigenvalues_; }

 private:
  Matrix basis_;
  Matrix basis_inv_;
  Vector eigenvalues_;
  double basis_det_ = 0.0;
};

Matrix assemble(const EigenOperator& op);
Vector evolve(const EigenOperator& op, const Vector& z, double dt);

/// sum_{k=0..terms} (A dt)^k / k!. Intended for terms >= 20 and
/// ||A dt||_F <= 2, where truncation error is far below 1e-12.
Matrix matexp_taylor(const Matrix& a, double dt, int terms = 30);

using VectorField = std::function<Vector(const Vector& z, double t)>;

/// A(z, t) = int_0^1 D_z f(s z, t) ds by composite Simpson quadrature over
/// `nodes` intervals (rounded up to even) with central-difference Jacobians
/// of step h. For f(0, t) = 0 this satisfies A(z, t) z = f(z, t).
Matrix factorization_oracle(const VectorField& f, const Vector& z, double t,
                            int nodes = 32, double h = 1e-5);

/// CSV block layout:
///   # operator,d=<d>,zero_mask=<i;j;...>
///   A,<d*d row-major values>
///   P,<d*d row-major values>
///   lambda,<d values>
void write_operator_csv(std::ostream& out, const EigenOperator& op);
EigenOperator read_operator_csv(std::istream& in);

}  // namespace cellmnn
