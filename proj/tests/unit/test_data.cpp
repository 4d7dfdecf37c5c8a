// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/data.hpp"
#include "cellmnn/error.hpp"
#include "cellmnn/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unsupported/Eigen/MatrixFunctions>

using namespace cellmnn;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cellmnn-test-data";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

Matrix random_orthonormal(Rng& rng, Index rows, Index cols) {
  Matrix g(rows, cols);
  for (Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
  return Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(rows, cols);
}

}  // namespace

TEST_CASE("time grid validation") {
  CHECK_THROWS_AS(TimeGrid({0, 1, 1}), ConfigError);
  CHECK_THROWS_AS(TimeGrid({2, 1}), ConfigError);
  TimeGrid g({0, 1, 2, 3, 7});
  CHECK(g.index_of(3.0).value() == 3);
  CHECK_FALSE(g.index_of(4.0).has_value());
}

TEST_CASE("load the 4-row fixture") {
  const auto p = temp_path("four.csv");
  write_file(p, "time,g1,g2\n0,1.0,2.0\n0,1.5,2.5\n1,3.0,4.0\n1,3.5,4.5\n");
  fs::remove(fs::path(p.string() + ".json"));
  const SnapshotDataset d = load_dataset(p);
  CHECK(d.size() == 4);
  CHECK(d.grid().size() == 2);
  CHECK(d.bucket(0).size() == 2);
  CHECK(d.bucket(1).size() == 2);
  CHECK(d.gene_names() == std::vector<std::string>{"g1", "g2"});
}

TEST_CASE("tab-separated files are accepted") {
  const auto p = temp_path("four.tsv");
  write_file(p, "time\tg1\n0\t1\n1\t2\n");
  CHECK(load_dataset(p).size() == 2);
}

TEST_CASE("labels outside the declared grid are rejected by name") {
  const auto p = temp_path("offgrid.csv");
  write_file(p, "time,g1\n0,1\n5,2\n");
  write_file(fs::path(p.string() + ".json"), R"({"grid": [0, 1]})");
  try {
    load_dataset(p);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('5') != std::string::npos);
    CHECK(e.line() == 3);
  }
}

TEST_CASE("parse errors carry row numbers") {
  const auto p = temp_path("bad.csv");
  fs::remove(fs::path(p.string() + ".json"));
  write_file(p, "time,g1\n0,1\n1,abc\n");
  try {
    load_dataset(p);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  write_file(p, "t,g1\n0,1\n");
  CHECK_THROWS_AS(load_dataset(p), ParseError);
  write_file(p, "time,g1\n0,1\n");
  write_file(fs::path(p.string() + ".json"), R"({"grid": [0, 1]})");
  CHECK_THROWS_AS(load_dataset(p), ParseError);  // empty bucket at t = 1
  fs::remove(fs::path(p.string() + ".json"));
}

TEST_CASE("save and load round trip bitwise") {
  Rng rng(3);
  Matrix x(6, 3);
  for (Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal() / 3.0;
  const SnapshotDataset d(x, {0, 0, 1, 1, 2, 2}, TimeGrid({0, 1, 2}), {"a", "b", "c"}, 4);
  const auto p = temp_path("round.csv");
  save_dataset(p, d);
  const SnapshotDataset back = load_dataset(p);
  CHECK((back.x().array() == x.array()).all());
  CHECK(back.times() == d.times());
  CHECK(back.dataset_id() == 4);
  CHECK(back.gene_names() == d.gene_names());
}

TEST_CASE("pca examples") {
  SUBCASE("rank-one data gets the positive axis") {
    Matrix x = Matrix::Zero(5, 3);
    for (Index i = 0; i < 5; ++i) x(i, 0) = -(1.0 + static_cast<double>(i));
    const PcaBasis b = fit_pca(x, 1);
    CHECK(std::abs(b.v(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(b.v(1, 0)) < 1e-12);
  }
  SUBCASE("orthonormal and residual matches a dense SVD") {
    Rng rng(9);
    Matrix x(50, 10);
    for (Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
    const PcaBasis b = fit_pca(x, 4);
    CHECK((b.v.transpose() * b.v - Matrix::Identity(4, 4)).norm() < 1e-10);
    const Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeFullV);
    const Matrix v4 = svd.matrixV().leftCols(4);
    const double ours = (x - x * b.v * b.v.transpose()).norm();
    const double oracle = (x - x * v4 * v4.transpose()).norm();
    CHECK(std::abs(ours - oracle) < 1e-8);
    const PcaBasis again = fit_pca(x, 4);
    CHECK((again.v.array() == b.v.array()).all());
  }
  SUBCASE("d_z too large") {
    CHECK_THROWS_AS(fit_pca(Matrix::Ones(3, 5), 4), ConfigError);
  }
}

TEST_CASE("projection identities") {
  Rng rng(4);
  PcaBasis b;
  b.v = random_orthonormal(rng, 6, 2);
  Vector z(2);
  z << 0.3, -1.7;
  CHECK((b.project(b.backproject(z)) - z).norm() < 1e-10);
  const Vector in_span = b.v * z;
  CHECK((b.backproject(b.project(in_span)) - in_span).norm() < 1e-12);
  // Component orthogonal to span(V).
  Vector r(6);
  for (Index k = 0; k < 6; ++k) r[k] = rng.normal();
  const Vector perp = r - b.v * (b.v.transpose() * r);
  CHECK(b.project(perp).norm() < 1e-12);
}

TEST_CASE("centered pca keeps the mean") {
  Rng rng(8);
  Matrix x(40, 3);
  for (Index i = 0; i < 40; ++i) {
    const double s = rng.normal();
    x.row(i) << 5.0 + s, -2.0 + 0.5 * s, 1.0;
  }
  const PcaBasis b = fit_pca(x, 1, true);
  CHECK(b.centered);
  CHECK(std::abs(b.mean[0] - x.col(0).mean()) < 1e-12);
  const Vector x0 = x.row(0).transpose();
  CHECK((b.backproject(b.project(x0)) - x0).norm() < 1e-10);
  const auto p = temp_path("basis.csv");
  save_basis(p, b);
  const PcaBasis back = load_basis(p);
  CHECK((back.v.array() == b.v.array()).all());
  CHECK((back.mean.array() == b.mean.array()).all());
}

TEST_CASE("batch sampling") {
  Matrix x(3, 1);
  x << 1, 2, 10;
  const SnapshotDataset d(x, {0, 0, 1});
  SUBCASE("replacement allows batches larger than a bucket") {
    CHECK(sample_batch(d, 0, 50, 1).rows() == 50);
  }
  SUBCASE("fixed seed repeats") {
    CHECK((sample_batch(d, 0, 20, 7).array() == sample_batch(d, 0, 20, 7).array()).all());
  }
  SUBCASE("off-grid time") {
    CHECK_THROWS(sample_batch(d, 0.5, 2, 1));
  }
  SUBCASE("empirical mean within three standard errors") {
    Rng rng(1);
    Matrix big(1000, 1);
    for (Index i = 0; i < 1000; ++i) big(i, 0) = rng.normal() * 2.0 + 1.0;
    const SnapshotDataset s(big, std::vector<double>(1000, 0.0));
    const Matrix draws = sample_batch(s, 0, 100000, 3);
    const double mean = big.mean();
    const double sd = std::sqrt((big.array() - mean).square().mean());
    CHECK(std::abs(draws.mean() - mean) < 3.0 * sd / std::sqrt(100000.0));
  }
}

TEST_CASE("synthetic linear snapshots") {
  Rng rng(5);
  const Matrix emb = random_orthonormal(rng, 4, 2);
  SUBCASE("frozen dynamics") {
    Vector mu = Vector::Zero(2);
    const auto s = synth_linear_snapshots(Matrix::Zero(2, 2), gaussian_sampler(mu, Matrix::Identity(2, 2)),
                                          TimeGrid({0, 1}), 3000, emb, 0.0, 1);
    const Matrix a = s.data.marginal(0);
    const Matrix b = s.data.marginal(1);
    CHECK((a.colwise().mean() - b.colwise().mean()).norm() < 0.1);
  }
  SUBCASE("scalar exp on a point mass") {
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = std::log(2.0);
    const auto s = synth_linear_snapshots(a, mixture_sampler({Vector::Ones(2)}, 0.0), TimeGrid({0, 1}), 5,
                                          Matrix::Identity(2, 2), 0.0, 1);
    const Matrix m1 = s.data.marginal(1);
    for (Index i = 0; i < m1.rows(); ++i) {
      CHECK(std::abs(m1(i, 0) - 2.0) < 1e-12);
      CHECK(std::abs(m1(i, 1) - 1.0) < 1e-12);
    }
  }
  SUBCASE("different seeds share the marginal law") {
    Matrix a(2, 2);
    a << 0.1, 0.4, -0.3, -0.2;
    const auto sampler = gaussian_sampler(Vector::Zero(2), Matrix::Identity(2, 2));
    const auto s1 = synth_linear_snapshots(a, sampler, TimeGrid({0, 1}), 300, Matrix::Identity(2, 2), 0.0, 1);
    const auto s2 = synth_linear_snapshots(a, sampler, TimeGrid({0, 1}), 300, Matrix::Identity(2, 2), 0.0, 2);
    const auto s3 = synth_linear_snapshots(a, sampler, TimeGrid({0, 1}), 300, Matrix::Identity(2, 2), 0.0, 3);
    const LossConfig cfg;
    CHECK((s1.data.marginal(1) - s2.data.marginal(1)).norm() > 1.0);
    // Three batches from the same law: the s1/s2 discrepancy is on the
    // scale of the s2/s3 one, far below a shifted law.
    const double same = mmd2_laplacian(s1.data.marginal(1), s2.data.marginal(1), cfg);
    const double floor = mmd2_laplacian(s2.data.marginal(1), s3.data.marginal(1), cfg);
    Matrix shifted = s3.data.marginal(1);
    shifted.col(0).array() += 2.0;
    const double apart = mmd2_laplacian(s1.data.marginal(1), shifted, cfg);
    CHECK(same < 4.0 * floor + 1e-3);
    CHECK(apart > 3.0 * (same + floor));
  }
  SUBCASE("covariance follows the analytic push-forward") {
    Matrix a(2, 2);
    a << -0.2, 0.5, -0.3, 0.1;
    Matrix cov(2, 2);
    cov << 1.0, 0.3, 0.3, 0.5;
    const auto s = synth_linear_snapshots(a, gaussian_sampler(Vector::Zero(2), cov), TimeGrid({0, 1.5}), 10000,
                                          Matrix::Identity(2, 2), 0.0, 11);
    const Matrix z = s.data.marginal(1.5);
    const Matrix centered = z.rowwise() - z.colwise().mean();
    const Matrix sample_cov = centered.transpose() * centered / static_cast<double>(z.rows() - 1);
    const Matrix e = (a * 1.5).exp();
    const Matrix analytic = e * cov * e.transpose();
    CHECK((sample_cov - analytic).norm() / analytic.norm() < 0.05);
  }
}

TEST_CASE("spiral snapshots") {
  SpiralOptions opts;
  const VectorField f = spiral_field(opts);
  const Vector origin = Vector::Zero(2);
  CHECK(f(origin, 0.0).norm() == 0.0);
  CHECK(rk4_integrate(f, origin, 0.0, 2.0, 1e-3).norm() == 0.0);

  const auto s = synth_spiral_snapshots(TimeGrid({0, 1, 2}), 50, 3, opts);
  for (std::size_t k = 0; k < 3; ++k) CHECK(s.data.bucket(k).size() == 50);
  CHECK(s.latent.allFinite());
  // Radius is conserved when the radial rate is zero.
  Vector z0(2);
  z0 << 0.6, 0.8;
  const Vector z2 = rk4_integrate(f, z0, 0.0, 2.0, 1e-3);
  CHECK(std::abs(z2.norm() - 1.0) < 1e-4);
}

TEST_CASE("dataset inflation") {
  Rng rng(6);
  const Matrix emb = random_orthonormal(rng, 5, 2);
  const auto s = synth_linear_snapshots(Matrix::Zero(2, 2), gaussian_sampler(Vector::Zero(2), Matrix::Identity(2, 2)),
                                        TimeGrid({0, 1, 2}), 700, emb, 0.0, 2);
  const PcaBasis basis = fit_pca(s.data.x(), 2);

  SUBCASE("zero noise at the same size keeps latent coordinates") {
    const SnapshotDataset same = inflate_dataset(s.data, basis, s.data.size(), 0.0, 1);
    CHECK((basis.project_rows(same.x()) - basis.project_rows(s.data.x())).norm() < 1e-10);
  }
  SUBCASE("exact target size with proportions preserved") {
    const SnapshotDataset big = inflate_dataset(s.data, basis, 16000, 0.1, 1);
    CHECK(big.size() == 16000);
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(std::abs(static_cast<double>(big.bucket(k).size()) - 16000.0 / 3.0) <= 1.0);
  }
  SUBCASE("a quarter-million rows") {
    const SnapshotDataset big = inflate_dataset(s.data, basis, 250000, 0.1, 1);
    CHECK(big.size() == 250000);
  }
  SUBCASE("latent variance grows by noise_sd squared") {
    const SnapshotDataset base = inflate_dataset(s.data, basis, 100000, 0.0, 4);
    const SnapshotDataset noisy = inflate_dataset(s.data, basis, 100000, 0.1, 4);
    const Matrix zb = basis.project_rows(base.x());
    const Matrix zn = basis.project_rows(noisy.x());
    for (Index c = 0; c < 2; ++c) {
      const double vb = (zb.col(c).array() - zb.col(c).mean()).square().mean();
      const double vn = (zn.col(c).array() - zn.col(c).mean()).square().mean();
      CHECK(std::abs((vn - vb) - 0.01) < 0.003);
    }
  }
  SUBCASE("target below the dataset size") {
    CHECK_THROWS_AS(inflate_dataset(s.data, basis, 10, 0.1, 1), ConfigError);
  }
}
