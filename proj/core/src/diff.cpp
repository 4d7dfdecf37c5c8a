// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/diff.hpp"

#include "cellmnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cellmnn::diff {

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const std::string& op,
                              std::initializer_list<const Matrix*> operands) {
  std::ostringstream os;
  os << "op '" << op << "': incompatible operand shapes";
  for (const Matrix* m : operands) os << ' ' << shape_of(*m);
  throw ShapeError(os.str());
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ConfigError("diff: operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ConfigError("diff: operands live on different tapes");
  return t;
}

void require_same_shape(const std::string& op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    shape_error(op, {&a.value(), &b.value()});
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

// -- Var / Tape ------------------------------------------------------------

const Matrix& Var::value() const { return tape_->node(id_).value; }
const Matrix& Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) shape_error("scalar", {&v});
  return v(0, 0);
}

Var Tape::leaf(Matrix value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(double value) {
  return constant(Matrix::Constant(1, 1, value));
}

Var Tape::push(std::string op, Matrix value, std::vector<int> parents,
               std::function<void(Tape&, const Node&)> backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](int p) { return needs_grad(p); });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

void Tape::accumulate(int id, const Matrix& delta) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  n.grad += delta;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad.setZero(n.value.rows(), n.value.cols());
  }
  has_run_ = false;
}

void Tape::backward(const Var& output, bool accumulate) {
  if (output.tape() != this) throw ConfigError("backward: Var belongs to another tape");
  const Matrix& out = output.value();
  if (out.rows() != 1 || out.cols() != 1)
    throw ShapeError("backward: output must be scalar, got " + shape_of(out));
  if (has_run_ && !accumulate)
    throw ConfigError("backward: gradients already computed; call zero_grad() or pass accumulate=true");

  // An accumulating pass runs on fresh buffers and is added to what was
  // there, so intermediate grads from the earlier pass are not re-propagated.
  std::vector<Matrix> previous;
  if (has_run_) {
    previous.reserve(nodes_.size());
    for (Node& n : nodes_) previous.push_back(std::move(n.grad));
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad.setZero(n.value.rows(), n.value.cols());
  }
  has_run_ = true;

  const int top = output.id();
  Node& root = nodes_[static_cast<std::size_t>(top)];
  if (root.requires_grad) {
    root.grad(0, 0) = 1.0;
    // Only nodes at or below the output can contribute.
    for (int i = top; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.backward) n.backward(*this, n);
    }
  }
  for (std::size_t i = 0; i < previous.size(); ++i) {
    if (nodes_[i].requires_grad && previous[i].size() == nodes_[i].grad.size())
      nodes_[i].grad += previous[i];
  }
}

// -- Elementwise and linear ops --------------------------------------------

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  return t.push("add", a.value() + b.value(), {ia, ib},
                [ia, ib](Tape& tp, const Node& n) {
                  tp.accumulate(ia, n.grad);
                  tp.accumulate(ib, n.grad);
                });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return t.push("sub", a.value() - b.value(), {ia, ib},
                [ia, ib](Tape& tp, const Node& n) {
                  tp.accumulate(ia, n.grad);
                  tp.accumulate(ib, -n.grad);
                });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ShapeError("op 'add_n': no operands");
  Tape& t = tape_of(terms.front());
  Matrix value = terms.front().value();
  std::vector<int> parents;
  parents.reserve(terms.size());
  parents.push_back(terms.front().id());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    tape_of(terms.front(), terms[k]);
    require_same_shape("add_n", terms.front(), terms[k]);
    value += terms[k].value();
    parents.push_back(terms[k].id());
  }
  return t.push("add_n", std::move(value), parents,
                [](Tape& tp, const Node& n) {
                  for (int p : n.parents) tp.accumulate(p, n.grad);
                });
}

Var scale(const Var& a, double c) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("scale", a.value() * c, {ia},
                [ia, c](Tape& tp, const Node& n) { tp.accumulate(ia, n.grad * c); });
}

Var add_const(const Var& a, double c) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("add_const", (a.value().array() + c).matrix(), {ia},
                [ia](Tape& tp, const Node& n) { tp.accumulate(ia, n.grad); });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) shape_error("matmul", {&a.value(), &b.value()});
  const int ia = a.id(), ib = b.id();
  return t.push("matmul", a.value() * b.value(), {ia, ib},
                [ia, ib](Tape& tp, const Node& n) {
                  const Matrix& av = tp.node(ia).value;
                  const Matrix& bv = tp.node(ib).value;
                  if (tp.needs_grad(ia)) tp.grad_ref(ia).noalias() += n.grad * bv.transpose();
                  if (tp.needs_grad(ib)) tp.grad_ref(ib).noalias() += av.transpose() * n.grad;
                });
}

Var matvec(const Var& a, const Var& v) {
  Tape& t = tape_of(a, v);
  if (v.cols() != 1 || a.cols() != v.rows()) shape_error("matvec", {&a.value(), &v.value()});
  const int ia = a.id(), iv = v.id();
  return t.push("matvec", a.value() * v.value(), {ia, iv},
                [ia, iv](Tape& tp, const Node& n) {
                  const Matrix& av = tp.node(ia).value;
                  const Matrix& vv = tp.node(iv).value;
                  if (tp.needs_grad(ia)) tp.grad_ref(ia).noalias() += n.grad * vv.transpose();
                  if (tp.needs_grad(iv)) tp.grad_ref(iv).noalias() += av.transpose() * n.grad;
                });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("transpose", a.value().transpose(), {ia},
                [ia](Tape& tp, const Node& n) {
                  tp.accumulate(ia, n.grad.transpose());
                });
}

Var exp(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("exp", a.value().array().exp().matrix(), {ia},
                [ia](Tape& tp, const Node& n) {
                  tp.accumulate(ia, n.grad.cwiseProduct(n.value));
                });
}

Var leaky_relu(const Var& a, double slope) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return t.push("leaky_relu", std::move(v), {ia},
                [ia, slope](Tape& tp, const Node& n) {
                  const Matrix& x = tp.node(ia).value;
                  Matrix d = x.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
                  tp.accumulate(ia, n.grad.cwiseProduct(d));
                });
}

Var l1_norm(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("l1_norm", Matrix::Constant(1, 1, a.value().cwiseAbs().sum()), {ia},
                [ia](Tape& tp, const Node& n) {
                  const Matrix& x = tp.node(ia).value;
                  tp.accumulate(ia, x.unaryExpr(&sign0) * n.grad(0, 0));
                });
}

Var l2_norm_sq(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("l2_norm_sq", Matrix::Constant(1, 1, a.value().squaredNorm()), {ia},
                [ia](Tape& tp, const Node& n) {
                  tp.accumulate(ia, tp.node(ia).value * (2.0 * n.grad(0, 0)));
                });
}

std::pair<Var, Var> inverse_and_det(const Var& a) {
  Tape& t = tape_of(a);
  if (a.rows() != a.cols()) shape_error("inverse", {&a.value()});
  const int ia = a.id();
  Eigen::PartialPivLU<Matrix> lu(a.value());
  const double d = lu.determinant();
  Matrix inv = lu.inverse();
  Var inv_var = t.push("inverse", inv, {ia}, [ia](Tape& tp, const Node& n) {
    // d(A^-1) = -A^-1 dA A^-1
    const Matrix& ai = n.value;
    tp.grad_ref(ia).noalias() -= ai.transpose() * n.grad * ai.transpose();
  });
  const int iinv = inv_var.id();
  Var det_var = t.push("det", Matrix::Constant(1, 1, d), {ia},
                       [ia, iinv](Tape& tp, const Node& n) {
                         // d det(A) = det(A) tr(A^-1 dA)
                         const Matrix& ai = tp.node(iinv).value;
                         tp.grad_ref(ia).noalias() +=
                             (n.grad(0, 0) * n.value(0, 0)) * ai.transpose();
                       });
  return {inv_var, det_var};
}

Var det(const Var& a) {
  Tape& t = tape_of(a);
  if (a.rows() != a.cols()) shape_error("det", {&a.value()});
  const int ia = a.id();
  Eigen::PartialPivLU<Matrix> lu(a.value());
  const double d = lu.determinant();
  // Adjugate transpose: det(A) A^-T, computed without dividing by det so
  // that the gradient stays finite at singular A.
  Matrix cof;
  const Index k = a.rows();
  if (k == 1) {
    cof = Matrix::Ones(1, 1);
  } else if (k == 2) {
    const Matrix& m = a.value();
    cof.resize(2, 2);
    cof << m(1, 1), -m(1, 0), -m(0, 1), m(0, 0);
  } else {
    cof = d * lu.inverse().transpose();
  }
  return t.push("det", Matrix::Constant(1, 1, d), {ia},
                [ia, cof = std::move(cof)](Tape& tp, const Node& n) {
                  tp.grad_ref(ia).noalias() += n.grad(0, 0) * cof;
                });
}

Var inverse(const Var& a) { return inverse_and_det(a).first; }

Var max_const(const Var& a, double c) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("max_const", a.value().cwiseMax(c), {ia},
                [ia, c](Tape& tp, const Node& n) {
                  const Matrix& x = tp.node(ia).value;
                  Matrix mask = x.unaryExpr([c](double v) { return v > c ? 1.0 : 0.0; });
                  tp.accumulate(ia, n.grad.cwiseProduct(mask));
                });
}

Var mean(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const double count = static_cast<double>(a.value().size());
  return t.push("mean", Matrix::Constant(1, 1, a.value().sum() / count), {ia},
                [ia, count](Tape& tp, const Node& n) {
                  tp.grad_ref(ia).array() += n.grad(0, 0) / count;
                });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("sum", Matrix::Constant(1, 1, a.value().sum()), {ia},
                [ia](Tape& tp, const Node& n) {
                  tp.grad_ref(ia).array() += n.grad(0, 0);
                });
}

Var cwise_mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("cwise_mul", a, b);
  const int ia = a.id(), ib = b.id();
  return t.push("cwise_mul", a.value().cwiseProduct(b.value()), {ia, ib},
                [ia, ib](Tape& tp, const Node& n) {
                  if (tp.needs_grad(ia)) tp.grad_ref(ia) += n.grad.cwiseProduct(tp.node(ib).value);
                  if (tp.needs_grad(ib)) tp.grad_ref(ib) += n.grad.cwiseProduct(tp.node(ia).value);
                });
}

Var abs(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("abs", a.value().cwiseAbs(), {ia}, [ia](Tape& tp, const Node& n) {
    tp.accumulate(ia, n.grad.cwiseProduct(tp.node(ia).value.unaryExpr(&sign0)));
  });
}

Var reciprocal(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push("reciprocal", a.value().cwiseInverse(), {ia},
                [ia](Tape& tp, const Node& n) {
                  tp.accumulate(ia, -n.grad.cwiseProduct(n.value.cwiseAbs2()));
                });
}

// -- Structural ops --------------------------------------------------------

Var block(const Var& a, Index row, Index col, Index rows, Index cols) {
  Tape& t = tape_of(a);
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > a.rows() ||
      col + cols > a.cols()) {
    throw ShapeError("op 'block': window (" + std::to_string(row) + "," +
                     std::to_string(col) + ")+" + std::to_string(rows) + "x" +
                     std::to_string(cols) + " outside " + shape_of(a.value()));
  }
  const int ia = a.id();
  return t.push("block", a.value().block(row, col, rows, cols), {ia},
                [ia, row, col, rows, cols](Tape& tp, const Node& n) {
                  tp.grad_ref(ia).block(row, col, rows, cols) += n.grad;
                });
}

Var reshape(const Var& a, Index rows, Index cols) {
  Tape& t = tape_of(a);
  if (rows * cols != a.value().size()) {
    throw ShapeError("op 'reshape': cannot view " + shape_of(a.value()) + " as " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = a.value();
  Matrix out = Eigen::Map<RowMajor>(src.data(), rows, cols);
  const int ia = a.id();
  const Index r0 = a.rows(), c0 = a.cols();
  return t.push("reshape", std::move(out), {ia},
                [ia, r0, c0](Tape& tp, const Node& n) {
                  RowMajor g = n.grad;
                  Matrix back = Eigen::Map<RowMajor>(g.data(), r0, c0);
                  tp.accumulate(ia, back);
                });
}

Var bias_add(const Var& a, const Var& row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("bias_add", {&a.value(), &row.value()});
  const int ia = a.id(), ib = row.id();
  Matrix v = a.value().rowwise() + row.value().row(0);
  return t.push("bias_add", std::move(v), {ia, ib},
                [ia, ib](Tape& tp, const Node& n) {
                  tp.accumulate(ia, n.grad);
                  if (tp.needs_grad(ib)) tp.grad_ref(ib) += n.grad.colwise().sum();
                });
}

Var rows_from(std::span<const Var> columns) {
  if (columns.empty()) throw ShapeError("op 'rows_from': no operands");
  Tape& t = tape_of(columns.front());
  const Index d = columns.front().rows();
  Matrix out(static_cast<Index>(columns.size()), d);
  std::vector<int> parents;
  parents.reserve(columns.size());
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const Var& c = columns[i];
    tape_of(columns.front(), c);
    if (c.cols() != 1 || c.rows() != d) shape_error("rows_from", {&columns.front().value(), &c.value()});
    out.row(static_cast<Index>(i)) = c.value().col(0).transpose();
    parents.push_back(c.id());
  }
  return t.push("rows_from", std::move(out), parents, [](Tape& tp, const Node& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const int p = n.parents[i];
      if (tp.needs_grad(p)) tp.grad_ref(p) += n.grad.row(static_cast<Index>(i)).transpose();
    }
  });
}

Var pairwise_l1(const Var& x, const Var& y) {
  Tape& t = tape_of(x, y);
  if (x.cols() != y.cols()) shape_error("pairwise_l1", {&x.value(), &y.value()});
  const Matrix& xv = x.value();
  const Matrix& yv = y.value();
  const Index n = xv.rows(), m = yv.rows(), d = xv.cols();
  Matrix dist(n, m);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Index k = 0; k < d; ++k) s += std::abs(xv(i, k) - yv(j, k));
      dist(i, j) = s;
    }
  }
  const int ix = x.id(), iy = y.id();
  return t.push("pairwise_l1", std::move(dist), {ix, iy},
                [ix, iy](Tape& tp, const Node& node) {
                  const Matrix& xv = tp.node(ix).value;
                  const Matrix& yv = tp.node(iy).value;
                  const Index n = xv.rows(), m = yv.rows(), d = xv.cols();
                  const bool gx = tp.needs_grad(ix), gy = tp.needs_grad(iy);
                  Matrix dx = Matrix::Zero(n, d), dy = Matrix::Zero(m, d);
                  for (Index j = 0; j < m; ++j) {
                    for (Index i = 0; i < n; ++i) {
                      const double g = node.grad(i, j);
                      if (g == 0.0) continue;
                      for (Index k = 0; k < d; ++k) {
                        const double s = g * sign0(xv(i, k) - yv(j, k));
                        dx(i, k) += s;
                        dy(j, k) -= s;
                      }
                    }
                  }
                  if (gx) tp.grad_ref(ix) += dx;
                  if (gy) tp.grad_ref(iy) += dy;
                });
}

// -- Gradient check --------------------------------------------------------

GradCheckReport grad_check(const GraphFn& fn, std::span<const Matrix> inputs,
                           double h, double tol, double floor) {
  if (!(h > 0.0) || !(tol > 0.0)) throw ConfigError("grad_check: h and tol must be positive");

  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Matrix& m : inputs) vars.push_back(tape.leaf(m));
    Var out = fn(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  auto evaluate = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const Matrix& m : xs) vars.push_back(tape.leaf(m));
    return fn(tape, vars).scalar();
  };

  GradCheckReport report;
  std::vector<Matrix> probe(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (Index c = 0; c < probe[k].cols(); ++c) {
      for (Index r = 0; r < probe[k].rows(); ++r) {
        const double x0 = probe[k](r, c);
        probe[k](r, c) = x0 + h;
        const double fp = evaluate(probe);
        probe[k](r, c) = x0 - h;
        const double fm = evaluate(probe);
        probe[k](r, c) = x0;

        GradCheckEntry e;
        e.input = k;
        e.row = r;
        e.col = c;
        e.analytic = analytic[k](r, c);
        e.numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
        e.rel_error = std::abs(e.analytic - e.numeric) / denom;
        e.pass = e.rel_error < tol;
        report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        report.pass = report.pass && e.pass;
        report.entries.push_back(e);
      }
    }
  }
  return report;
}

}  // namespace cellmnn::diff
