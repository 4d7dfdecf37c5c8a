// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/error.hpp"
#include "cellmnn/interactions.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cellmnn;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(Rng& rng, Index r, Index c, double s = 1.0) {
  Matrix m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = s * rng.normal();
  return m;
}

PcaBasis orthonormal_basis(Rng& rng, Index dx, Index dz) {
  PcaBasis b;
  b.v = Eigen::HouseholderQR<Matrix>(random_matrix(rng, dx, dz)).householderQ() * Matrix::Identity(dx, dz);
  return b;
}

EncoderParams constant_encoder(int dz, const Matrix& basis, const Vector& lambda, std::vector<int> mask = {}) {
  EncoderConfig c;
  c.depth = 1;
  c.dz = dz;
  c.width = dz * dz + dz;
  c.zero_mask = std::move(mask);
  EncoderParams p = zero_params(c);
  Matrix& bias = p.layers.back().bias;
  for (int r = 0; r < dz; ++r)
    for (int col = 0; col < dz; ++col) bias(0, r * dz + col) = basis(r, col) - (r == col ? 1.0 : 0.0);
  for (int k = 0; k < lambda.size(); ++k) bias(0, dz * dz + k) = lambda[k];
  return p;
}

SnapshotDataset named_dataset(Matrix x, std::vector<double> times) {
  std::vector<std::string> names;
  for (Index g = 0; g < x.cols(); ++g) names.push_back("G" + std::to_string(g));
  return SnapshotDataset(std::move(x), std::move(times), std::nullopt, names);
}

}  // namespace

TEST_CASE("interaction weight examples") {
  Rng rng(1);
  Matrix a(2, 2);
  a << 0.5, -1.0, 2.0, 0.3;
  PcaBasis identity;
  identity.v = Matrix::Identity(2, 2);
  Vector x(2);
  x << 1.5, -0.5;
  const Matrix w = interaction_weights(a, identity, x);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) CHECK(w(i, j) == doctest::Approx(a(i, j) * x[j]).epsilon(1e-15));

  const PcaBasis b = orthonormal_basis(rng, 6, 2);
  const Matrix ra = random_matrix(rng, 2, 2);
  Vector rx = random_matrix(rng, 6, 1);
  rx[3] = 0.0;
  const Matrix dense = b.v * ra * b.v.transpose();
  const Matrix rw = interaction_weights(ra, b, rx);
  CHECK(rw.col(3).isZero(0.0));
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) CHECK(std::abs(rw(i, j) - dense(i, j) * rx[j]) < 1e-12);

  const Index subset[] = {4, 1};
  const Matrix sw = interaction_weights(ra, b, rx, subset);
  REQUIRE(sw.rows() == 2);
  CHECK(std::abs(sw(0, 1) - dense(4, 1) * rx[1]) < 1e-12);
  CHECK(std::abs(sw(1, 0) - dense(1, 4) * rx[4]) < 1e-12);
}

TEST_CASE("back-projection consistency") {
  Rng rng(2);
  const PcaBasis b = orthonormal_basis(rng, 7, 3);
  const Matrix a = random_matrix(rng, 3, 3);
  const Vector x = b.v * random_matrix(rng, 3, 1);
  const Vector lhs = (b.v * a * b.v.transpose()) * x;
  const Vector rhs = b.v * (a * (b.v.transpose() * x));
  CHECK((lhs - rhs).norm() < 1e-12);
  // Row sums of the weight matrix are the back-projected derivative.
  CHECK((interaction_weights(a, b, x).rowwise().sum() - rhs).norm() < 1e-12);
}

TEST_CASE("unknown gene names list near matches") {
  const std::vector<std::string> genes{"SOX2", "POU5F1", "NANOG", "GATA6"};
  CHECK(resolve_genes(genes, {"NANOG", "SOX2"}) == std::vector<Index>{2, 0});
  try {
    resolve_genes(genes, {"NANGO"});
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("NANOG") != std::string::npos);
  }
}

TEST_CASE("aggregation examples") {
  Rng rng(3);
  const PcaBasis b = orthonormal_basis(rng, 4, 2);
  Matrix lam_basis(2, 2);
  lam_basis << 1.0, 0.2, -0.1, 1.0;
  Vector lambda(2);
  lambda << 0.3, -0.4;
  const EncoderParams fixed = constant_encoder(2, lam_basis, lambda);
  const Matrix a = assemble(EigenOperator{lam_basis, lambda, {}});

  SUBCASE("exhaustive sample gives the dataset mean") {
    const Matrix x = random_matrix(rng, 30, 4);
    std::vector<double> times(30, 0.0);
    for (std::size_t k = 15; k < 30; ++k) times[k] = 1.0;
    const SnapshotDataset data = named_dataset(x, times);
    const AggregatedWeights agg = aggregate_weights(fixed, b, data, 30, 5);
    Matrix expected = Matrix::Zero(4, 4);
    for (Index r = 0; r < 30; ++r) expected += interaction_weights(a, b, x.row(r).transpose());
    expected /= 30.0;
    CHECK((agg.mean - expected).norm() < 1e-12);
    CHECK(agg.cells == 30);
    CHECK(agg.times.size() == 2);
    CHECK(agg.cells_by_time[0] + agg.cells_by_time[1] == 30);
    CHECK(agg.names[2] == "G2");
  }
  SUBCASE("constant cells give a single evaluation") {
    const Vector x0 = random_matrix(rng, 4, 1);
    Matrix x(20, 4);
    for (Index r = 0; r < 20; ++r) x.row(r) = x0.transpose();
    const SnapshotDataset data = named_dataset(x, std::vector<double>(20, 0.0));
    const AggregatedWeights agg = aggregate_weights(fixed, b, data, 50, 1);
    CHECK((agg.mean - interaction_weights(a, b, x0)).norm() < 1e-12);
  }
  SUBCASE("two seeds agree within sampling error") {
    const Matrix x = random_matrix(rng, 16000, 4);
    const SnapshotDataset data = named_dataset(x, std::vector<double>(16000, 0.0));
    // Per-edge standard error from the full population of weights.
    Matrix sum = Matrix::Zero(4, 4), sq = Matrix::Zero(4, 4);
    for (Index r = 0; r < x.rows(); ++r) {
      const Matrix w = interaction_weights(a, b, x.row(r).transpose());
      sum += w;
      sq += w.cwiseAbs2();
    }
    const Matrix mean = sum / 16000.0;
    const Matrix sd = (sq / 16000.0 - mean.cwiseAbs2()).cwiseSqrt();
    const AggregatedWeights s1 = aggregate_weights(fixed, b, data, 10000, 1);
    const AggregatedWeights s2 = aggregate_weights(fixed, b, data, 10000, 2);
    // Difference of two means of 10000 draws each.
    const Matrix se = sd * std::sqrt(2.0 / 10000.0);
    CHECK(((s1.mean - s2.mean).cwiseAbs().array() <= 3.0 * se.array() + 1e-15).all());
    CHECK((s1.mean.array() == aggregate_weights(fixed, b, data, 10000, 1).mean.array()).all());
  }
}

TEST_CASE("zero-mask operators give rank-deficient weights") {
  Rng rng(4);
  const PcaBasis b = orthonormal_basis(rng, 6, 3);
  Matrix basis = Matrix::Identity(3, 3) + 0.2 * random_matrix(rng, 3, 3);
  Vector lambda(2);
  lambda << 0.5, -0.7;
  const EncoderParams masked = constant_encoder(3, basis, lambda, {1});
  const EigenOperator op = predict_operator(masked, Vector::Ones(3), 0.0);
  const Matrix a = assemble(op);
  const Eigen::JacobiSVD<Matrix> svd(a);
  CHECK(svd.singularValues()[2] < 1e-10);
  const SnapshotDataset data = named_dataset(random_matrix(rng, 50, 6), std::vector<double>(50, 0.0));
  const AggregatedWeights agg = aggregate_weights(masked, b, data, 50, 1);
  // Mean over cells of W diag(x) stays in the same column space as W.
  const Matrix w = b.v * a * b.v.transpose();
  const Eigen::JacobiSVD<Matrix> wsvd(w);
  CHECK(wsvd.singularValues()[2] < 1e-10);
  CHECK(Eigen::JacobiSVD<Matrix>(agg.mean).singularValues()[2] < 1e-10);
}

TEST_CASE("source ranking") {
  Matrix w(3, 3);
  w << 0.0, 0.5, -2.0,
       0.0, -0.5, 1.0,
       0.0, 0.1, 0.2;
  CHECK(rank_sources(w) == std::vector<Index>{2, 1, 0});
  CHECK(rank_sources(w, true) == std::vector<Index>{1, 0, 2});

  AggregatedWeights agg;
  agg.names = {"a", "b", "c"};
  agg.genes = {0, 1, 2};
  agg.mean = w;
  agg.times = {0.0, 1.0};
  Matrix dominant_b = Matrix::Zero(3, 3);
  dominant_b.col(1).setConstant(5.0);
  agg.mean_by_time = {w, dominant_b};
  const TopSources top = top_source_genes(agg, 1);
  REQUIRE(top.per_time.size() == 2);
  CHECK(top.per_time[0].genes == std::vector<std::string>{"c"});
  CHECK(top.per_time[1].genes == std::vector<std::string>{"b"});
  CHECK(top.union_genes == std::vector<std::string>{"c", "b"});
  const TopSources all = top_source_genes(agg, 10);
  CHECK(all.per_time[0].genes.size() == 3);
  CHECK(all.per_time[0].genes.back() == "a");
}

TEST_CASE("regulatory database parsing") {
  const RegulatoryDb db = parse_regulatory_db("TF1\tG1\tActivation\t111\nTF1\tG2\tRepression\t222\nTF2\tG1\tUnknown\t333\n");
  CHECK(db.edges.size() == 3);
  CHECK(db.classifiable() == 2);

  const RegulatoryDb same = parse_regulatory_db("A\tB\tActivation\t1\nA\tB\tActivation\t2\n");
  REQUIRE(same.edges.size() == 1);
  CHECK(same.edges[0].mode == EdgeMode::Activation);
  CHECK(same.edges[0].references == "1;2");

  const RegulatoryDb tie = parse_regulatory_db("A\tB\tActivation\t1\nA\tB\tRepression\t2\n");
  REQUIRE(tie.edges.size() == 1);
  CHECK(tie.edges[0].mode == EdgeMode::Unknown);

  try {
    parse_regulatory_db("A\tB\tActivation\t1\nA\tB\tActivation\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_regulatory_db("A\tB\tSometimes\t1\n"), ParseError);
  CHECK_THROWS_AS(parse_regulatory_db("\tB\tActivation\t1\n"), ParseError);

  const fs::path p = fs::temp_directory_path() / "cellmnn-test-db.tsv";
  std::ofstream(p) << "X\tY\tRepression\t9\n";
  CHECK(load_regulatory_db(p).edges[0].mode == EdgeMode::Repression);
}

TEST_CASE("edge classification") {
  AggregatedWeights agg;
  agg.names = {"TF", "T1", "T2", "T3", "T4"};
  agg.genes = {0, 1, 2, 3, 4};
  agg.mean = Matrix::Zero(5, 5);
  agg.mean(1, 0) = 0.4;
  agg.mean(2, 0) = 0.1;
  agg.mean(3, 0) = -0.3;
  agg.mean(4, 0) = 0.0;
  agg.cells = 100;

  SUBCASE("perfect positive case") {
    RegulatoryDb db = parse_regulatory_db("TF\tT1\tActivation\t1\nTF\tT2\tActivation\t2\n");
    ClassifyOptions opts;
    opts.min_edges = 1;
    const InteractionReport r = classify_edges(agg, db, opts);
    REQUIRE(r.sources.size() == 1);
    CHECK(r.sources[0].precision == 1.0);
    CHECK(r.sources[0].recall == 1.0);
    CHECK(r.sources[0].f1 == 1.0);
  }
  SUBCASE("mixed predictions and the edge threshold") {
    RegulatoryDb db = parse_regulatory_db(
        "TF\tT1\tActivation\t1\nTF\tT2\tRepression\t2\nTF\tT3\tRepression\t3\nTF\tT4\tActivation\t4\n"
        "TF\tMISSING\tActivation\t5\n");
    ClassifyOptions opts;
    opts.min_edges = 3;
    const InteractionReport r = classify_edges(agg, db, opts);
    REQUIRE(r.sources.size() == 1);
    const SourceReport& s = r.sources[0];
    CHECK(s.edges == 4);
    CHECK(s.tp == 1);
    CHECK(s.fp == 1);
    CHECK(s.tn == 1);
    CHECK(s.fn == 1);  // a zero weight is not an activation call
    CHECK(std::abs(s.f1 - 2.0 * s.precision * s.recall / (s.precision + s.recall)) < 1e-12);
    opts.min_edges = 4;
    CHECK(classify_edges(agg, db, opts).sources.empty());
    opts.min_edges = 0;
    opts.top_sources = {"OTHER"};
    CHECK(classify_edges(agg, db, opts).sources.empty());
  }
  SUBCASE("positive rescaling leaves the calls unchanged") {
    RegulatoryDb db = parse_regulatory_db("TF\tT1\tActivation\t1\nTF\tT2\tRepression\t2\nTF\tT3\tRepression\t3\n");
    ClassifyOptions opts;
    opts.min_edges = 0;
    AggregatedWeights scaled = agg;
    scaled.mean *= 37.5;
    const auto a = classify_edges(agg, db, opts);
    const auto b = classify_edges(scaled, db, opts);
    CHECK(a.sources[0].f1 == b.sources[0].f1);
    CHECK(a.to_csv().find("TF") != std::string::npos);
    CHECK(a.to_json().find("\"f1\"") != std::string::npos);
  }
}

TEST_CASE("metric conventions") {
  SourceReport r;
  fill_metrics(r);
  CHECK(r.precision == 0.0);
  CHECK(r.f1 == 0.0);
  r.tp = 3;
  r.fp = 1;
  r.fn = 2;
  fill_metrics(r);
  CHECK(r.precision == doctest::Approx(0.75));
  CHECK(r.recall == doctest::Approx(0.6));
  CHECK(r.f1 == doctest::Approx(2.0 * 0.75 * 0.6 / 1.35));
}

TEST_CASE("random-sign null on balanced labels") {
  std::vector<EdgeMode> labels;
  for (int k = 0; k < 200; ++k) labels.push_back(k % 2 ? EdgeMode::Activation : EdgeMode::Repression);
  const NullDistribution null = random_sign_null(labels, 1000, 3);
  CHECK(std::abs(null.mean_f1 - 0.5) < 0.05);
  CHECK(null.std_f1 > 0.0);
}

TEST_CASE("ensemble summary across models") {
  auto model = [](double f1_a, double f1_b) {
    InteractionReport r;
    SourceReport a, b;
    a.gene = "A";
    a.f1 = f1_a;
    a.precision = 1.0;
    b.gene = "B";
    b.f1 = f1_b;
    r.sources = {a, b};
    return r;
  };
  const std::vector<InteractionReport> reports{model(0.6, 0.2), model(0.8, 0.4), model(1.0, 0.0)};
  const auto summary = summarize_ensemble(reports);
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].gene == "A");
  CHECK(summary[0].models == 3);
  CHECK(summary[0].f1.mean == doctest::Approx(0.8));
  CHECK(summary[0].f1.std == doctest::Approx(0.2));
  CHECK(summary[0].precision.std == 0.0);
  CHECK(summary[1].f1.mean == doctest::Approx(0.2));

  // A source missing from some models is summarized over the models that kept it.
  InteractionReport partial;
  partial.sources = {reports[0].sources[0]};
  const auto mixed = summarize_ensemble(std::vector<InteractionReport>{partial, reports[1]});
  REQUIRE(mixed.size() == 2);
  CHECK(mixed[0].models == 2);
  CHECK(mixed[1].models == 1);
  CHECK(mixed[1].f1.std == 0.0);

  CHECK(summarize_ensemble({}).empty());
}

TEST_CASE("operator export") {
  Rng rng(5);
  PcaBasis identity;
  identity.v = Matrix::Identity(2, 2);
  Vector lambda(2);
  lambda << 0.2, -0.1;
  const EncoderParams fixed = constant_encoder(2, Matrix::Identity(2, 2), lambda);
  const SnapshotDataset data = named_dataset(random_matrix(rng, 40, 2), std::vector<double>(40, 1.0));
  const fs::path p = fs::temp_directory_path() / "cellmnn-test-export.csv";
  export_operators(fixed, identity, data, 10, 2, {"G1"}, p);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(std::count(header.begin(), header.end(), ',') + 1 == 1 + 4 + 1);
  std::vector<std::string> ops;
  std::string line;
  while (std::getline(in, line)) {
    // Columns up to the marker value must be identical for a fixed operator.
    ops.push_back(line.substr(0, line.rfind(',')));
  }
  CHECK(ops.size() == 10);
  for (const auto& o : ops) CHECK(o == ops.front());
  CHECK_THROWS_AS(export_operators(fixed, identity, data, 10, 2, {"NOPE"}, p), ConfigError);
}
