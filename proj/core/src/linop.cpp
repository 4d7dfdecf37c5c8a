// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/linop.hpp"

#include "cellmnn/error.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

namespace cellmnn {

FactoredOperator::FactoredOperator(const EigenOperator& op)
    : basis_(op.basis), eigenvalues_(op.eigenvalues) {
  const Eigen::Index d = eigenvalues_.size();
  if (basis_.rows() != d || basis_.cols() != d) {
    throw ConfigError("operator: basis is " + std::to_string(basis_.rows()) + "x" +
                      std::to_string(basis_.cols()) + " but there are " +
                      std::to_string(d) + " eigenvalues");
  }
  for (int i : op.zero_mask) {
    if (i < 0 || i >= d) throw ConfigError("operator: zero_mask index out of range");
    if (eigenvalues_[i] != 0.0) throw ConfigError("operator: masked eigenvalue is not exactly 0");
  }
  Eigen::PartialPivLU<Matrix> lu(basis_);
  basis_det_ = lu.determinant();
  if (!(std::abs(basis_det_) >= kSingularBasisThreshold)) {
    std::ostringstream os;
    os << "operator: singular eigenvector basis, det(P) = " << basis_det_;
    throw SingularBasisError(os.str(), basis_det_);
  }
  basis_inv_ = lu.inverse();
}

Vector FactoredOperator::evolve(const Vector& z, double dt) const {
  const Vector coeffs = basis_inv_ * z;
  const Vector scaled = (eigenvalues_.array() * dt).exp() * coeffs.array();
  return basis_ * scaled;
}

Vector FactoredOperator::velocity(const Vector& z) const {
  const Vector coeffs = basis_inv_ * z;
  return basis_ * (eigenvalues_.array() * coeffs.array()).matrix();
}

Matrix FactoredOperator::assemble() const {
  return basis_ * eigenvalues_.asDiagonal() * basis_inv_;
}

Matrix assemble(const EigenOperator& op) { return FactoredOperator(op).assemble(); }

Vector evolve(const EigenOperator& op, const Vector& z, double dt) {
  return FactoredOperator(op).evolve(z, dt);
}

Matrix matexp_taylor(const Matrix& a, double dt, int terms) {
  const Eigen::Index d = a.rows();
  const Matrix x = a * dt;
  Matrix term = Matrix::Identity(d, d);
  Matrix total = term;
  for (int k = 1; k <= terms; ++k) {
    term = term * x / static_cast<double>(k);
    total += term;
  }
  return total;
}

Matrix factorization_oracle(const VectorField& f, const Vector& z, double t,
                            int nodes, double h) {
  const Eigen::Index d = z.size();
  if (nodes < 2) nodes = 2;
  if (nodes % 2) ++nodes;

  auto jacobian = [&](const Vector& at) {
    Matrix jac(d, d);
    Vector probe = at;
    for (Eigen::Index k = 0; k < d; ++k) {
      probe[k] = at[k] + h;
      const Vector fp = f(probe, t);
      probe[k] = at[k] - h;
      const Vector fm = f(probe, t);
      probe[k] = at[k];
      jac.col(k) = (fp - fm) / (2.0 * h);
    }
    return jac;
  };

  const double step = 1.0 / nodes;
  Matrix total = Matrix::Zero(d, d);
  for (int i = 0; i <= nodes; ++i) {
    const double s = i * step;
    const double w = (i == 0 || i == nodes) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    total += w * jacobian(s * z);
  }
  return total * (step / 3.0);
}

namespace {

void write_row(std::ostream& out, const char* tag, const double* data, Eigen::Index n) {
  out << tag;
  for (Eigen::Index i = 0; i < n; ++i) out << ',' << data[i];
  out << '\n';
}

std::vector<double> read_row(std::istream& in, const std::string& tag, std::size_t line) {
  std::string text;
  if (!std::getline(in, text)) throw ParseError("operator csv: missing '" + tag + "' row", line);
  std::stringstream ss(text);
  std::string cell;
  std::getline(ss, cell, ',');
  if (cell != tag) throw ParseError("operator csv: expected '" + tag + "' row, got '" + cell + "'", line);
  std::vector<double> values;
  while (std::getline(ss, cell, ',')) {
    try {
      values.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ParseError("operator csv: non-numeric entry '" + cell + "'", line);
    }
  }
  return values;
}

}  // namespace

void write_operator_csv(std::ostream& out, const EigenOperator& op) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto d = op.dim();
  out << "# operator,d=" << d << ",zero_mask=";
  for (std::size_t i = 0; i < op.zero_mask.size(); ++i) out << (i ? ";" : "") << op.zero_mask[i];
  out << '\n';
  const auto precision = out.precision(std::numeric_limits<double>::max_digits10);
  const RowMajor a = assemble(op);
  const RowMajor p = op.basis;
  write_row(out, "A", a.data(), a.size());
  write_row(out, "P", p.data(), p.size());
  write_row(out, "lambda", op.eigenvalues.data(), op.eigenvalues.size());
  out.precision(precision);
}

EigenOperator read_operator_csv(std::istream& in) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::string header;
  if (!std::getline(in, header) || header.rfind("# operator", 0) != 0)
    throw ParseError("operator csv: missing header", 1);
  int d = 0;
  std::vector<int> mask;
  std::stringstream hs(header);
  std::string field;
  while (std::getline(hs, field, ',')) {
    if (field.rfind("d=", 0) == 0) d = std::stoi(field.substr(2));
    if (field.rfind("zero_mask=", 0) == 0) {
      std::stringstream ms(field.substr(10));
      std::string idx;
      while (std::getline(ms, idx, ';'))
        if (!idx.empty()) mask.push_back(std::stoi(idx));
    }
  }
  if (d <= 0) throw ParseError("operator csv: bad dimension in header", 1);
  const auto a = read_row(in, "A", 2);
  const auto p = read_row(in, "P", 3);
  const auto lambda = read_row(in, "lambda", 4);
  const auto dd = static_cast<std::size_t>(d);
  if (a.size() != dd * dd || p.size() != dd * dd || lambda.size() != dd)
    throw ParseError("operator csv: block sizes do not match d", 0);
  EigenOperator op;
  op.basis = Eigen::Map<const RowMajor>(p.data(), d, d);
  op.eigenvalues = Eigen::Map<const Vector>(lambda.data(), d);
  op.zero_mask = std::move(mask);
  return op;
}

}  // namespace cellmnn
