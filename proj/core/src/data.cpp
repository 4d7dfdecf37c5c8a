// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/data.hpp"

#include "cellmnn/error.hpp"

#include <json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace cellmnn {

namespace {

bool same_time(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a));
}

std::string fmt_time(double t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

}  // namespace

// -- TimeGrid ----------------------------------------------------------------

TimeGrid::TimeGrid(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 1; i < values_.size(); ++i) {
    if (!(values_[i] > values_[i - 1]))
      throw ConfigError("time grid must be strictly increasing");
  }
}

std::optional<std::size_t> TimeGrid::index_of(double t) const {
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (same_time(values_[i], t)) return i;
  return std::nullopt;
}

std::size_t TimeGrid::require_index(double t) const {
  auto k = index_of(t);
  if (!k) throw ConfigError("time " + fmt_time(t) + " is not on the grid");
  return *k;
}

// -- SnapshotDataset ---------------------------------------------------------

SnapshotDataset::SnapshotDataset(Matrix x, std::vector<double> times,
                                 std::optional<TimeGrid> grid,
                                 std::vector<std::string> gene_names,
                                 std::optional<int> dataset_id)
    : x_(std::move(x)),
      times_(std::move(times)),
      gene_names_(std::move(gene_names)),
      dataset_id_(dataset_id) {
  if (static_cast<Index>(times_.size()) != x_.rows())
    throw ConfigError("dataset: " + std::to_string(times_.size()) + " time labels for " +
                      std::to_string(x_.rows()) + " rows");
  if (!gene_names_.empty() && static_cast<Index>(gene_names_.size()) != x_.cols())
    throw ConfigError("dataset: gene_names length does not match observation dimension");

  if (grid && grid->size() > 0) {
    grid_ = *grid;
  } else {
    std::vector<double> distinct = times_;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end(), same_time), distinct.end());
    grid_ = TimeGrid(std::move(distinct));
  }

  buckets_.assign(grid_.size(), {});
  for (std::size_t i = 0; i < times_.size(); ++i) {
    auto k = grid_.index_of(times_[i]);
    if (!k) throw ParseError("time label " + fmt_time(times_[i]) + " is not in the declared grid", 0);
    buckets_[*k].push_back(static_cast<Index>(i));
  }
  for (std::size_t k = 0; k < grid_.size(); ++k) {
    if (buckets_[k].empty())
      throw ParseError("grid time " + fmt_time(grid_[k]) + " has no samples", 0);
  }
}

Matrix SnapshotDataset::marginal(double t) const {
  const auto& rows = buckets_[grid_.require_index(t)];
  Matrix out(static_cast<Index>(rows.size()), x_.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x_.row(rows[i]);
  return out;
}

// -- PCA -----------------------------------------------------------------------

Vector PcaBasis::project(const Vector& x) const {
  if (x.size() != dx()) throw ShapeError("project: expected length " + std::to_string(dx()));
  return centered ? Vector(v.transpose() * (x - mean)) : Vector(v.transpose() * x);
}

Vector PcaBasis::backproject(const Vector& z) const {
  if (z.size() != dz()) throw ShapeError("backproject: expected length " + std::to_string(dz()));
  return centered ? Vector(v * z + mean) : Vector(v * z);
}

Matrix PcaBasis::project_rows(const Matrix& x) const {
  if (x.cols() != dx()) throw ShapeError("project_rows: expected " + std::to_string(dx()) + " columns");
  if (centered) return (x.rowwise() - mean.transpose()) * v;
  return x * v;
}

Matrix PcaBasis::backproject_rows(const Matrix& z) const {
  if (z.cols() != dz()) throw ShapeError("backproject_rows: expected " + std::to_string(dz()) + " columns");
  Matrix x = z * v.transpose();
  if (centered) x.rowwise() += mean.transpose();
  return x;
}

PcaBasis fit_pca(const Matrix& x, Index dz, bool centered) {
  if (dz < 1 || dz > std::min(x.rows(), x.cols()))
    throw ConfigError("fit_pca: d_z = " + std::to_string(dz) + " exceeds min(N, d_x) = " +
                      std::to_string(std::min(x.rows(), x.cols())));
  PcaBasis basis;
  basis.centered = centered;
  Matrix work;
  if (centered) {
    basis.mean = x.colwise().mean().transpose();
    work = x.rowwise() - basis.mean.transpose();
  }
  const Matrix& source = centered ? work : x;
  Eigen::BDCSVD<Matrix> svd(source, Eigen::ComputeThinV);
  basis.v = svd.matrixV().leftCols(dz);
  for (Index c = 0; c < dz; ++c) {
    Index arg = 0;
    basis.v.col(c).cwiseAbs().maxCoeff(&arg);
    if (basis.v(arg, c) < 0.0) basis.v.col(c) *= -1.0;
  }
  return basis;
}

LatentMarginals project_marginals(const SnapshotDataset& data, const PcaBasis& basis) {
  LatentMarginals out;
  out.grid = data.grid();
  out.dataset_id = data.dataset_id();
  out.buckets.reserve(data.grid().size());
  for (std::size_t k = 0; k < data.grid().size(); ++k)
    out.buckets.push_back(basis.project_rows(data.marginal(data.grid()[k])));
  return out;
}

// -- Sampling --------------------------------------------------------------------

Matrix BatchSampler::sample(double t, Index batch) {
  const Matrix& bucket = marginals_->at(t);
  Matrix out(batch, bucket.cols());
  const auto n = static_cast<std::uint64_t>(bucket.rows());
  for (Index i = 0; i < batch; ++i) out.row(i) = bucket.row(static_cast<Index>(rng_.below(n)));
  return out;
}

Matrix sample_batch(const SnapshotDataset& data, double t, Index batch, std::uint64_t seed) {
  const auto& rows = data.bucket(data.grid().require_index(t));
  Rng rng(seed);
  Matrix out(batch, data.dim());
  for (Index i = 0; i < batch; ++i)
    out.row(i) = data.x().row(rows[rng.below(rows.size())]);
  return out;
}

// -- I/O ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, delim)) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

double parse_number(const std::string& text, std::size_t line, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  while (used < text.size() && std::isspace(static_cast<unsigned char>(text[used]))) ++used;
  if (used == 0 || used != text.size())
    throw ParseError("non-numeric " + what + " '" + text + "'", line);
  return v;
}

std::filesystem::path sidecar_of(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

SnapshotDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path.string() + "'", 0);

  std::string header;
  if (!std::getline(in, header)) throw ParseError("dataset is empty", 1);
  const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
  auto columns = split(header, delim);
  if (columns.empty() || columns.front() != "time")
    throw ParseError("missing 'time' column (first header cell must be 'time')", 1);
  std::vector<std::string> genes(columns.begin() + 1, columns.end());
  if (genes.empty()) throw ParseError("dataset has no observation columns", 1);

  std::vector<double> times;
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split(line, delim);
    if (cells.size() != columns.size())
      throw ParseError("expected " + std::to_string(columns.size()) + " fields, got " +
                           std::to_string(cells.size()),
                       lineno);
    times.push_back(parse_number(cells[0], lineno, "time"));
    for (std::size_t c = 1; c < cells.size(); ++c)
      values.push_back(parse_number(cells[c], lineno, "entry in column '" + columns[c] + "'"));
  }
  if (times.empty()) throw ParseError("dataset has no rows", 2);

  std::optional<TimeGrid> grid;
  std::optional<int> dataset_id;
  const auto side = sidecar_of(path);
  if (std::filesystem::exists(side)) {
    std::ifstream sin(side);
    nlohmann::json meta;
    try {
      sin >> meta;
    } catch (const std::exception& e) {
      throw ParseError("invalid sidecar '" + side.string() + "': " + e.what(), 0);
    }
    if (meta.contains("grid")) grid = TimeGrid(meta["grid"].get<std::vector<double>>());
    if (meta.contains("dataset_id") && !meta["dataset_id"].is_null())
      dataset_id = meta["dataset_id"].get<int>();
  }

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Matrix x = Eigen::Map<RowMajor>(values.data(), static_cast<Index>(times.size()),
                                  static_cast<Index>(genes.size()));

  // Re-raise label errors with the offending row number.
  if (grid) {
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (!grid->index_of(times[i]))
        throw ParseError("time label " + fmt_time(times[i]) + " is not in the declared grid", i + 2);
    }
  }
  return SnapshotDataset(std::move(x), std::move(times), grid, std::move(genes), dataset_id);
}

void save_dataset(const std::filesystem::path& path, const SnapshotDataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset '" + path.string() + "'");
  const char delim = path.extension() == ".tsv" ? '\t' : ',';
  out << "time";
  for (Index c = 0; c < data.dim(); ++c) {
    out << delim;
    if (!data.gene_names().empty()) out << data.gene_names()[static_cast<std::size_t>(c)];
    else out << "g" << c;
  }
  out << '\n';
  out.precision(std::numeric_limits<double>::max_digits10);
  for (Index r = 0; r < data.size(); ++r) {
    out << data.times()[static_cast<std::size_t>(r)];
    for (Index c = 0; c < data.dim(); ++c) out << delim << data.x()(r, c);
    out << '\n';
  }
  nlohmann::json meta;
  meta["grid"] = data.grid().values();
  meta["dataset_id"] = data.dataset_id() ? nlohmann::json(*data.dataset_id()) : nlohmann::json();
  std::ofstream side(sidecar_of(path));
  side << meta.dump(2) << '\n';
}

void save_basis(const std::filesystem::path& path, const PcaBasis& basis) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write basis '" + path.string() + "'");
  out << "# pca,centered=" << (basis.centered ? 1 : 0) << ",dx=" << basis.dx()
      << ",dz=" << basis.dz() << '\n';
  out.precision(std::numeric_limits<double>::max_digits10);
  if (basis.centered) {
    out << "# mean";
    for (Index i = 0; i < basis.mean.size(); ++i) out << ',' << basis.mean[i];
    out << '\n';
  }
  for (Index r = 0; r < basis.dx(); ++r) {
    for (Index c = 0; c < basis.dz(); ++c) out << (c ? "," : "") << basis.v(r, c);
    out << '\n';
  }
}

PcaBasis load_basis(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open basis '" + path.string() + "'", 0);
  std::string header;
  std::getline(in, header);
  if (header.rfind("# pca", 0) != 0) throw ParseError("missing '# pca' header", 1);
  PcaBasis basis;
  Index dx = 0, dz = 0;
  for (const auto& f : split(header, ',')) {
    if (f.rfind("centered=", 0) == 0) basis.centered = f.substr(9) == "1";
    if (f.rfind("dx=", 0) == 0) dx = std::stol(f.substr(3));
    if (f.rfind("dz=", 0) == 0) dz = std::stol(f.substr(3));
  }
  if (dx <= 0 || dz <= 0) throw ParseError("basis header lacks dx/dz", 1);
  std::size_t lineno = 1;
  std::string line;
  if (basis.centered) {
    std::getline(in, line);
    ++lineno;
    auto cells = split(line, ',');
    if (cells.empty() || cells.front() != "# mean" || static_cast<Index>(cells.size()) != dx + 1)
      throw ParseError("centered basis needs a '# mean' row of length dx", lineno);
    basis.mean.resize(dx);
    for (Index i = 0; i < dx; ++i) basis.mean[i] = parse_number(cells[static_cast<std::size_t>(i + 1)], lineno, "mean");
  }
  basis.v.resize(dx, dz);
  for (Index r = 0; r < dx; ++r) {
    if (!std::getline(in, line)) throw ParseError("basis has too few rows", lineno + 1);
    ++lineno;
    auto cells = split(line, ',');
    if (static_cast<Index>(cells.size()) != dz) throw ParseError("basis row has wrong width", lineno);
    for (Index c = 0; c < dz; ++c) basis.v(r, c) = parse_number(cells[static_cast<std::size_t>(c)], lineno, "entry");
  }
  return basis;
}

// -- Synthetic generators ----------------------------------------------------------

LatentSampler gaussian_sampler(Vector mean, Matrix cov) {
  Matrix chol = Eigen::LLT<Matrix>(cov).matrixL();
  return [mean = std::move(mean), chol = std::move(chol)](Rng& rng) {
    Vector e(mean.size());
    for (Index i = 0; i < e.size(); ++i) e[i] = rng.normal();
    return Vector(mean + chol * e);
  };
}

LatentSampler mixture_sampler(std::vector<Vector> centers, double sd) {
  if (centers.empty()) throw ConfigError("mixture_sampler: no centers");
  return [centers = std::move(centers), sd](Rng& rng) {
    const Vector& c = centers[rng.below(centers.size())];
    Vector z(c.size());
    for (Index i = 0; i < z.size(); ++i) z[i] = c[i] + sd * rng.normal();
    return z;
  };
}

SyntheticSnapshots synth_linear_snapshots(const Matrix& a_star, const LatentSampler& z0,
                                          const TimeGrid& grid, Index n_per_time,
                                          const Matrix& embedding, double noise_sd,
                                          std::uint64_t seed) {
  const Index dz = a_star.rows();
  if (a_star.cols() != dz || embedding.cols() != dz)
    throw ShapeError("synth_linear_snapshots: A* and embedding disagree on d_z");
  Rng rng(seed);
  const Index n = n_per_time * static_cast<Index>(grid.size());
  const Index dx = embedding.rows();
  SyntheticSnapshots out;
  out.latent.resize(n, dz);
  Matrix x(n, dx);
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(n));
  Index row = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Matrix flow = (a_star * grid[k]).exp();
    for (Index i = 0; i < n_per_time; ++i, ++row) {
      const Vector z = flow * z0(rng);
      out.latent.row(row) = z.transpose();
      Vector obs = embedding * z;
      if (noise_sd > 0.0)
        for (Index c = 0; c < dx; ++c) obs[c] += noise_sd * rng.normal();
      x.row(row) = obs.transpose();
      times.push_back(grid[k]);
    }
  }
  out.data = SnapshotDataset(std::move(x), std::move(times), grid);
  out.a_star = a_star;
  out.embedding = embedding;
  return out;
}

VectorField spiral_field(const SpiralOptions& opts) {
  return [opts](const Vector& z, double) {
    const double r2 = z.squaredNorm();
    const double omega = opts.omega0 + opts.omega_r2 * r2;
    const double radial = opts.radial_rate * (opts.r0 * opts.r0 - r2);
    Vector f(2);
    f[0] = -omega * z[1] + radial * z[0];
    f[1] = omega * z[0] + radial * z[1];
    return f;
  };
}

Vector rk4_integrate(const VectorField& f, Vector z, double t0, double t1, double step) {
  if (t1 <= t0) return z;
  const auto n = static_cast<long>(std::ceil((t1 - t0) / step - 1e-9));
  const double h = (t1 - t0) / static_cast<double>(n);
  double t = t0;
  for (long i = 0; i < n; ++i) {
    const Vector k1 = f(z, t);
    const Vector k2 = f(z + 0.5 * h * k1, t + 0.5 * h);
    const Vector k3 = f(z + 0.5 * h * k2, t + 0.5 * h);
    const Vector k4 = f(z + h * k3, t + h);
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += h;
  }
  return z;
}

SyntheticSnapshots synth_spiral_snapshots(const TimeGrid& grid, Index n_per_time,
                                          std::uint64_t seed, const SpiralOptions& opts) {
  Rng rng(seed);
  const VectorField f = spiral_field(opts);
  const Index n = n_per_time * static_cast<Index>(grid.size());
  SyntheticSnapshots out;
  out.latent.resize(n, 2);
  std::vector<double> times;
  Index row = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (Index i = 0; i < n_per_time; ++i, ++row) {
      const double radius = 0.6 + 0.8 * rng.uniform();
      const double angle = 0.35 * rng.normal();
      Vector z(2);
      z << radius * std::cos(angle), radius * std::sin(angle);
      out.latent.row(row) = rk4_integrate(f, z, 0.0, grid[k], opts.step).transpose();
      times.push_back(grid[k]);
    }
  }
  out.embedding = Matrix::Identity(2, 2);
  out.data = SnapshotDataset(out.latent, std::move(times), grid, {"z0", "z1"});
  return out;
}

SnapshotDataset inflate_dataset(const SnapshotDataset& data, const PcaBasis& basis,
                                Index target_n, double noise_sd, std::uint64_t seed) {
  const Index n = data.size();
  if (target_n < n) throw ConfigError("inflate: target_n must be at least the dataset size");
  const std::size_t k = data.grid().size();

  // Largest-remainder quotas keep per-time proportions.
  std::vector<Index> quota(k);
  std::vector<std::pair<double, std::size_t>> remainders;
  Index assigned = 0;
  for (std::size_t b = 0; b < k; ++b) {
    const double exact = static_cast<double>(target_n) * static_cast<double>(data.bucket(b).size()) /
                         static_cast<double>(n);
    quota[b] = static_cast<Index>(std::floor(exact));
    assigned += quota[b];
    remainders.emplace_back(exact - std::floor(exact), b);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (Index i = 0; i < target_n - assigned; ++i) ++quota[remainders[static_cast<std::size_t>(i)].second];

  Rng rng(seed);
  Matrix x(target_n, data.dim());
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(target_n));
  Index row = 0;
  for (std::size_t b = 0; b < k; ++b) {
    const auto& rows = data.bucket(b);
    for (Index i = 0; i < quota[b]; ++i, ++row) {
      const Index src = i < static_cast<Index>(rows.size())
                            ? rows[static_cast<std::size_t>(i)]
                            : rows[rng.below(rows.size())];
      Vector z = basis.project(data.x().row(src).transpose());
      if (noise_sd > 0.0)
        for (Index c = 0; c < z.size(); ++c) z[c] += noise_sd * rng.normal();
      x.row(row) = basis.backproject(z).transpose();
      times.push_back(data.grid()[b]);
    }
  }
  return SnapshotDataset(std::move(x), std::move(times), data.grid(), data.gene_names(),
                         data.dataset_id());
}

}  // namespace cellmnn
