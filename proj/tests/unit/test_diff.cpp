// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/diff.hpp"
#include "cellmnn/error.hpp"
#include "cellmnn/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace cellmnn;
using diff::Matrix;
using diff::Tape;
using diff::Var;
using diff::Node;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -2.0, double hi = 2.0) {
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = lo + (hi - lo) * rng.uniform();
  return m;
}

// Keeps every entry at least `gap` away from the kinks at 0.
Matrix away_from_zero(Matrix m, double gap) {
  for (Eigen::Index k = 0; k < m.size(); ++k)
    if (std::abs(m.data()[k]) < gap) m.data()[k] = m.data()[k] < 0 ? -gap : gap;
  return m;
}

double check(const diff::GraphFn& fn, std::vector<Matrix> inputs) {
  const auto report = diff::grad_check(fn, inputs, 1e-6, 1e-5);
  return report.max_rel_error;
}

}  // namespace

TEST_CASE("forward values of the worked examples") {
  Tape tape;
  Var x = tape.leaf(Matrix::Constant(1, 1, 3.0));
  CHECK(diff::l2_norm_sq(x).scalar() == doctest::Approx(9.0));

  Var eye = tape.leaf(Matrix::Identity(2, 2));
  CHECK(diff::det(eye).scalar() == doctest::Approx(1.0));

  Matrix d(2, 2);
  d << 2, 0, 0, 3;
  Matrix inv = diff::inverse(tape.leaf(d)).value();
  CHECK(inv(0, 0) == doctest::Approx(0.5));
  CHECK(inv(1, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(inv(0, 1) == 0.0);
  CHECK(inv(1, 0) == 0.0);
}

TEST_CASE("gradients of the worked examples") {
  SUBCASE("x^2 at 3") {
    Tape tape;
    Var x = tape.leaf(Matrix::Constant(1, 1, 3.0));
    tape.backward(diff::l2_norm_sq(x));
    CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
  }
  SUBCASE("det at the identity") {
    Tape tape;
    Var a = tape.leaf(Matrix::Identity(2, 2));
    tape.backward(diff::det(a));
    CHECK((a.grad() - Matrix::Identity(2, 2)).norm() < 1e-14);
    const double err = check([](Tape&, std::span<const Var> in) { return diff::det(in[0]); },
                             {Matrix::Identity(2, 2)});
    CHECK(err < 1e-6);
  }
  SUBCASE("sum of the inverse") {
    Matrix p(2, 2);
    p << 2, 1, 0, 1;
    Tape tape;
    Var v = tape.leaf(p);
    tape.backward(diff::sum(diff::inverse(v)));
    const Matrix pit = p.inverse().transpose();
    const Matrix expected = -pit * Matrix::Ones(2, 2) * pit;
    CHECK((v.grad() - expected).norm() < 1e-12);
  }
}

TEST_CASE("grad_check harness") {
  SUBCASE("exp at 0.5") {
    const auto report = diff::grad_check([](Tape&, std::span<const Var> in) { return diff::sum(diff::exp(in[0])); },
                                         std::vector<Matrix>{Matrix::Constant(1, 1, 0.5)}, 1e-6, 1e-6);
    CHECK(report.pass);
    CHECK(report.max_rel_error < 1e-6);
  }
  SUBCASE("l1 norm away from kinks") {
    Matrix z(3, 1);
    z << 0.7, -1.2, 0.4;
    const auto report = diff::grad_check([](Tape&, std::span<const Var> in) { return diff::l1_norm(in[0]); },
                                         std::vector<Matrix>{z}, 1e-6, 1e-6);
    CHECK(report.pass);
  }
  SUBCASE("constant function") {
    const auto report = diff::grad_check(
        [](Tape& t, std::span<const Var>) { return t.constant(4.0); }, std::vector<Matrix>{Matrix::Ones(2, 2)}, 1e-6,
        1e-6);
    CHECK(report.pass);
    for (const auto& e : report.entries) {
      CHECK(e.analytic == 0.0);
      CHECK(e.numeric == 0.0);
    }
  }
  SUBCASE("a wrong gradient is reported, not thrown") {
    // Doubles the value but only passes the upstream gradient through once.
    const auto bad_double = [](Tape& t, std::span<const Var> in) {
      const Var x = in[0];
      const Var y = t.push("bad_double", 2.0 * x.value(), {x.id()},
                           [](Tape& tape, const Node& n) { tape.accumulate(n.parents[0], n.grad); });
      return diff::sum(y);
    };
    const auto report = diff::grad_check(bad_double, std::vector<Matrix>{Matrix::Constant(2, 1, 0.5)}, 1e-6, 1e-6);
    CHECK_FALSE(report.pass);
    CHECK(report.entries.size() == 2);
    CHECK(report.entries[0].rel_error == doctest::Approx(0.5).epsilon(1e-6));
  }
}

TEST_CASE("every op matches central differences on random inputs") {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = random_matrix(rng, 3, 3);
    const Matrix b = random_matrix(rng, 3, 3);
    const Matrix v = random_matrix(rng, 3, 1);
    const Matrix w = random_matrix(rng, 3, 1);
    const Matrix pts_x = random_matrix(rng, 4, 2);
    const Matrix pts_y = random_matrix(rng, 3, 2);
    // Well-conditioned matrix for inverse/det: identity plus a small random part.
    const Matrix p = Matrix::Identity(3, 3) + 0.3 * random_matrix(rng, 3, 3, -1.0, 1.0);

    auto weighted = [](Tape& t, const Var& x) {
      // Non-commensurate weights so that signed sums of them never cancel.
      Matrix c(x.rows(), x.cols());
      for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = 0.3 + 0.1 * std::sqrt(static_cast<double>(k + 2));
      return diff::sum(diff::cwise_mul(x, t.constant(c)));
    };

    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::add(in[0], in[1])); }, {a, b}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::sub(in[0], in[1])); }, {a, b}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::scale(in[0], -1.7)); }, {a}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::matmul(in[0], in[1])); }, {a, b}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::matvec(in[0], in[1])); }, {a, v}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::transpose(in[0])); }, {a}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::exp(in[0])); }, {a}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::leaky_relu(in[0])); },
                                  {away_from_zero(a, 1e-4)}));
    worst = std::max(worst, check([](Tape&, std::span<const Var> in) { return diff::l1_norm(in[0]); }, {away_from_zero(a, 1e-4)}));
    worst = std::max(worst, check([](Tape&, std::span<const Var> in) { return diff::l2_norm_sq(in[0]); }, {a}));
    worst = std::max(worst, check([](Tape&, std::span<const Var> in) { return diff::det(in[0]); }, {p}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::inverse(in[0])); }, {p}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) {
                       auto [inv, d] = diff::inverse_and_det(in[0]);
                       return diff::add(weighted(t, inv), d);
                     }, {p}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::max_const(in[0], 0.25)); },
                                  {away_from_zero(a.array() - 0.25, 1e-4).array() + 0.25}));
    worst = std::max(worst, check([](Tape&, std::span<const Var> in) { return diff::mean(in[0]); }, {a}));
    worst = std::max(worst, check([](Tape&, std::span<const Var> in) { return diff::sum(in[0]); }, {a}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::cwise_mul(in[0], in[1])); }, {v, w}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::abs(in[0])); }, {away_from_zero(a, 1e-4)}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::reciprocal(in[0])); },
                                  {away_from_zero(a, 0.3)}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::block(in[0], 1, 0, 2, 2)); }, {a}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::reshape(in[0], 1, 9)); }, {a}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::bias_add(in[0], in[1])); },
                                  {a, Matrix(v.transpose())}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) {
                       std::vector<Var> cols{in[0], in[1]};
                       return weighted(t, diff::rows_from(cols));
                     }, {v, w}));
    worst = std::max(worst, check([&](Tape& t, std::span<const Var> in) { return weighted(t, diff::pairwise_l1(in[0], in[1])); },
                                  {pts_x, pts_y}));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("2x2 inverse and determinant gradients match closed forms") {
  Matrix a(2, 2);
  a << 1.5, -0.4, 0.7, 2.1;
  const double d = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  Matrix cof(2, 2);
  cof << a(1, 1), -a(1, 0), -a(0, 1), a(0, 0);

  Tape tape;
  Var v = tape.leaf(a);
  tape.backward(diff::det(v));
  CHECK((v.grad() - cof).norm() < 1e-14);

  // d/dA of [A^-1]_{01} is -(A^-T e0)(e1^T A^-T) = -A^-T e0 e1^T A^-T.
  Tape tape2;
  Var u = tape2.leaf(a);
  tape2.backward(diff::block(diff::inverse(u), 0, 1, 1, 1));
  Matrix inv(2, 2);
  inv << a(1, 1) / d, -a(0, 1) / d, -a(1, 0) / d, a(0, 0) / d;
  Matrix e0e1 = Matrix::Zero(2, 2);
  e0e1(0, 1) = 1.0;
  const Matrix expected = -inv.transpose() * e0e1 * inv.transpose();
  CHECK((u.grad() - expected).norm() < 1e-14);
}

TEST_CASE("backward preconditions") {
  Tape tape;
  Var x = tape.leaf(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(x), ShapeError);

  Var s = diff::sum(x);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), ConfigError);

  tape.backward(s, /*accumulate=*/true);
  CHECK((x.grad() - Matrix::Constant(2, 2, 2.0)).norm() == 0.0);

  tape.zero_grad();
  tape.backward(s);
  CHECK((x.grad() - Matrix::Ones(2, 2)).norm() == 0.0);
}

TEST_CASE("accumulating backward does not re-propagate stale intermediates") {
  Tape tape;
  Var x = tape.leaf(Matrix::Constant(1, 1, 2.0));
  Var y = diff::exp(x);
  Var out = diff::sum(y);
  tape.backward(out);
  tape.backward(out, true);
  tape.backward(out, true);
  CHECK(x.grad()(0, 0) == doctest::Approx(3.0 * std::exp(2.0)).epsilon(1e-14));
}

TEST_CASE("shape errors name the op and the operands") {
  Tape tape;
  Var a = tape.leaf(Matrix::Ones(2, 3));
  Var b = tape.leaf(Matrix::Ones(2, 3));
  try {
    diff::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(diff::add(a, tape.leaf(Matrix::Ones(3, 2))), ShapeError);
  CHECK_THROWS_AS(diff::det(a), ShapeError);
}

TEST_CASE("evaluation is deterministic") {
  Rng rng(5);
  const Matrix a = Matrix::Identity(3, 3) + 0.2 * random_matrix(rng, 3, 3);
  auto run = [&] {
    Tape tape;
    Var v = tape.leaf(a);
    Var out = diff::add(diff::sum(diff::exp(diff::matmul(v, diff::inverse(v)))), diff::det(v));
    tape.backward(out);
    return std::make_pair(out.scalar(), Matrix(v.grad()));
  };
  const auto r1 = run();
  const auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK((r1.second.array() == r2.second.array()).all());
}
