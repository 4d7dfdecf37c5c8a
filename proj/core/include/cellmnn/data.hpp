// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Snapshot datasets, PCA bases, batch sampling and synthetic generators.

#pragma once

#include "cellmnn/linop.hpp"
#include "cellmnn/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cellmnn {

using Index = Eigen::Index;

class TimeGrid {
 public:
  TimeGrid() = default;
  /// Throws ConfigError unless `values` is strictly increasing.
  explicit TimeGrid(std::vector<double> values);

  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  /// Position of t in the grid (matched within 1e-9 relative).
  std::optional<std::size_t> index_of(double t) const;
  std::size_t require_index(double t) const;

 private:
  std::vector<double> values_;
};

/// One observation per simulated or measured trajectory, labelled by time.
class SnapshotDataset {
 public:
  SnapshotDataset() = default;
  /// Validates labels against the grid and builds per-time buckets. When
  /// `grid` is empty the distinct labels become the grid.
  SnapshotDataset(Matrix x, std::vector<double> times, std::optional<TimeGrid> grid = {},
                  std::vector<std::string> gene_names = {},
                  std::optional<int> dataset_id = {});

  const Matrix& x() const { return x_; }
  const std::vector<double>& times() const { return times_; }
  const TimeGrid& grid() const { return grid_; }
  const std::vector<std::string>& gene_names() const { return gene_names_; }
  std::optional<int> dataset_id() const { return dataset_id_; }
  void set_dataset_id(std::optional<int> id) { dataset_id_ = id; }

  Index size() const { return x_.rows(); }
  Index dim() const { return x_.cols(); }
  /// Row indices of the samples at grid position k.
  const std::vector<Index>& bucket(std::size_t k) const { return buckets_[k]; }
  /// Observation rows for grid time t, one per sample.
  Matrix marginal(double t) const;

 private:
  Matrix x_;
  std::vector<double> times_;
  TimeGrid grid_;
  std::vector<std::string> gene_names_;
  std::optional<int> dataset_id_;
  std::vector<std::vector<Index>> buckets_;
};

/// Linear projection between observation space (d_x) and latent space (d_z).
struct PcaBasis {
  Matrix v;            // d_x x d_z, orthonormal columns
  bool centered = false;
  Vector mean;         // length d_x when centered, empty otherwise

  Index dx() const { return v.rows(); }
  Index dz() const { return v.cols(); }
  Vector project(const Vector& x) const;
  Vector backproject(const Vector& z) const;
  /// Row-wise versions for N x d_x / N x d_z matrices.
  Matrix project_rows(const Matrix& x) const;
  Matrix backproject_rows(const Matrix& z) const;
};

/// Top-d_z right singular vectors of X (or of X minus its column mean).
/// Each column's largest-magnitude entry is made positive.
PcaBasis fit_pca(const Matrix& x, Index dz, bool centered = false);

/// Per-time latent marginals used by training and evaluation.
struct LatentMarginals {
  TimeGrid grid;
  std::vector<Matrix> buckets;  // grid order, each n_t x d_z
  std::optional<int> dataset_id;

  const Matrix& at(double t) const { return buckets[grid.require_index(t)]; }
  Index dz() const { return buckets.empty() ? 0 : buckets.front().cols(); }
};

LatentMarginals project_marginals(const SnapshotDataset& data, const PcaBasis& basis);

/// Uniform with-replacement sampling from per-time buckets. Every draw
/// advances the generator, so a sampler seeded identically replays the
/// same sequence of batches.
class BatchSampler {
 public:
  BatchSampler(const LatentMarginals& marginals, std::uint64_t seed)
      : marginals_(&marginals), rng_(seed) {}
  Matrix sample(double t, Index batch);

 private:
  const LatentMarginals* marginals_;
  Rng rng_;
};

/// Batch of observation vectors from mu_t; uniform with replacement.
Matrix sample_batch(const SnapshotDataset& data, double t, Index batch, std::uint64_t seed);

// -- I/O -------------------------------------------------------------------

/// CSV/TSV with a `time` first column and one named column per gene. A
/// sidecar `<path>.json` may declare {"grid": [...], "dataset_id": k}.
SnapshotDataset load_dataset(const std::filesystem::path& path);
/// Writes the table with round-trip precision and the sidecar when the
/// dataset carries an id.
void save_dataset(const std::filesystem::path& path, const SnapshotDataset& data);

/// `# pca,centered=<0|1>,dx=..,dz=..`, optional `# mean,...`, then d_x rows.
void save_basis(const std::filesystem::path& path, const PcaBasis& basis);
PcaBasis load_basis(const std::filesystem::path& path);

// -- Synthetic generators ----------------------------------------------------

using LatentSampler = std::function<Vector(Rng&)>;

LatentSampler gaussian_sampler(Vector mean, Matrix cov);
/// Equal-weight isotropic Gaussian mixture.
LatentSampler mixture_sampler(std::vector<Vector> centers, double sd);

struct SyntheticSnapshots {
  SnapshotDataset data;
  Matrix latent;        // N x d_z noise-free states, row-aligned with data
  Matrix a_star;        // generating operator (empty for nonlinear fields)
  Matrix embedding;     // d_x x d_z
};

/// Each grid time draws fresh initial states, evolves them exactly by
/// exp(A* t) and embeds x = V z + noise.
SyntheticSnapshots synth_linear_snapshots(const Matrix& a_star, const LatentSampler& z0,
                                          const TimeGrid& grid, Index n_per_time,
                                          const Matrix& embedding, double noise_sd,
                                          std::uint64_t seed);

struct SpiralOptions {
  double omega0 = 1.0;       // angular speed at the origin
  double omega_r2 = 0.5;     // extra angular speed per unit r^2
  double radial_rate = 0.0;  // kappa in kappa (r0^2 - r^2) z; 0 keeps r fixed
  double r0 = 1.0;
  double step = 1e-3;        // RK4 step
};

/// 2-D field f(z) = omega(r) J z + kappa (r0^2 - r^2) z with f(0) = 0,
/// integrated with RK4. Initial states come from an off-centre arc.
SyntheticSnapshots synth_spiral_snapshots(const TimeGrid& grid, Index n_per_time,
                                          std::uint64_t seed, const SpiralOptions& opts = {});

VectorField spiral_field(const SpiralOptions& opts);
Vector rk4_integrate(const VectorField& f, Vector z, double t0, double t1, double step);

/// Resamples rows with replacement to `target_n` rows (originals kept, per-time
/// proportions preserved up to rounding by one) and adds N(0, noise_sd^2)
/// noise in latent coordinates before backprojecting.
SnapshotDataset inflate_dataset(const SnapshotDataset& data, const PcaBasis& basis,
                                Index target_n, double noise_sd, std::uint64_t seed);

}  // namespace cellmnn
