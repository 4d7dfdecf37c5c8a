// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gene interaction weights from back-projected operators. For a cell x at
// time t with latent operator A, w_{j->i} = [V A V^T]_{ij} x_j is the
// contribution of gene j to the derivative of gene i. Weight matrices are
// indexed (target i, source j).

#pragma once

#include "cellmnn/data.hpp"
#include "cellmnn/encoder.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cellmnn {

/// Positions of `names` in `genes`. Throws ConfigError naming the closest
/// matches for each unknown name.
std::vector<Index> resolve_genes(const std::vector<std::string>& genes, const std::vector<std::string>& names);

/// Weights for one cell from a latent operator. `genes` selects rows of V
/// (empty: all genes); cost is O(|genes| d_z^2 + |genes|^2 d_z).
Matrix interaction_weights(const Matrix& a, const PcaBasis& basis, const Vector& x,
                           std::span<const Index> genes = {});

/// Same, with A predicted by the encoder at (V^T x, t).
Matrix interaction_weights(const EncoderParams& params, const PcaBasis& basis, const Vector& x, double t,
                           std::span<const Index> genes = {}, std::optional<int> dataset = {});

struct AggregatedWeights {
  std::vector<Index> genes;
  std::vector<std::string> names;
  Matrix mean;                        // over all sampled cells
  std::vector<double> times;          // grid times with at least one sampled cell
  std::vector<Matrix> mean_by_time;   // same order as times
  std::vector<Index> cells_by_time;
  Index cells = 0;
  std::uint64_t seed = 0;
};

/// Mean weights over n_cells cells drawn uniformly without replacement (with
/// replacement once n_cells exceeds the dataset).
AggregatedWeights aggregate_weights(const EncoderParams& params, const PcaBasis& basis,
                                    const SnapshotDataset& data, Index n_cells, std::uint64_t seed,
                                    std::span<const Index> genes = {});

/// Source genes ordered by activity sum_i |w_{j->i}| (sum_i w_{j->i} when
/// signed), most active first; ties keep gene order.
std::vector<Index> rank_sources(const Matrix& weights, bool signed_activity = false);

struct RankedSources {
  double time = 0.0;
  std::vector<std::string> genes;
};

struct TopSources {
  std::vector<RankedSources> per_time;
  std::vector<std::string> union_genes;  // first appearance order
};

TopSources top_source_genes(const AggregatedWeights& agg, std::size_t k, bool signed_activity = false);

// -- Regulatory reference ---------------------------------------------------------

enum class EdgeMode { Activation, Repression, Unknown };

const char* to_string(EdgeMode mode);

struct RegulatoryEdge {
  std::string source;
  std::string target;
  EdgeMode mode = EdgeMode::Unknown;
  std::string references;
};

struct RegulatoryDb {
  std::vector<RegulatoryEdge> edges;  // duplicates collapsed

  /// Collapses duplicate (source, target) pairs by majority mode; ties
  /// become Unknown.
  static RegulatoryDb from_edges(std::vector<RegulatoryEdge> raw);
  std::size_t classifiable() const;
};

/// Four tab-separated columns: source, target, mode, references.
RegulatoryDb load_regulatory_db(const std::filesystem::path& path);
RegulatoryDb parse_regulatory_db(const std::string& text);

struct EdgeCall {
  std::string target;
  EdgeMode label = EdgeMode::Unknown;
  EdgeMode predicted = EdgeMode::Unknown;
  double mean_weight = 0.0;
};

struct SourceReport {
  std::string gene;
  std::size_t edges = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<EdgeCall> calls;
};

struct InteractionReport {
  std::vector<SourceReport> sources;
  Index cells = 0;
  std::uint64_t seed = 0;

  std::string to_csv() const;
  std::string to_json() const;
};

struct ClassifyOptions {
  /// A source needs more than this many classifiable edges.
  std::size_t min_edges = 10;
  /// Restrict to these sources; empty keeps every source gene.
  std::vector<std::string> top_sources;
};

/// Predicted mode is Activation when the mean weight is positive and
/// Repression otherwise; Activation is the positive class.
InteractionReport classify_edges(const AggregatedWeights& agg, const RegulatoryDb& db,
                                 const ClassifyOptions& opts = {});

/// Precision, recall and F1 with Activation as the positive class. Empty
/// denominators give 0.
void fill_metrics(SourceReport& r);

struct NullDistribution {
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
};

/// F1 of uniformly random sign predictions against `labels`.
NullDistribution random_sign_null(std::span<const EdgeMode> labels, int resamples, std::uint64_t seed);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one model
};

struct EnsembleSource {
  std::string gene;
  std::size_t models = 0;  // models whose report kept this source
  MeanStd precision;
  MeanStd recall;
  MeanStd f1;
};

/// Per-source metrics across independently trained models, in order of
/// first appearance.
std::vector<EnsembleSource> summarize_ensemble(std::span<const InteractionReport> reports);

/// CSV with one row per sampled cell: time, row-major assembled A, then the
/// expression of each marker gene.
void export_operators(const EncoderParams& params, const PcaBasis& basis, const SnapshotDataset& data,
                      Index n_cells, std::uint64_t seed, const std::vector<std::string>& markers,
                      const std::filesystem::path& path);

}  // namespace cellmnn
