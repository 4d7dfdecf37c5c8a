// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/interactions.hpp"

#include "cellmnn/error.hpp"
#include "cellmnn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace cellmnn {

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<Index> all_genes(Index dx) {
  std::vector<Index> g(static_cast<std::size_t>(dx));
  std::iota(g.begin(), g.end(), Index{0});
  return g;
}

std::vector<std::string> gene_labels(const SnapshotDataset& data) {
  if (!data.gene_names().empty()) return data.gene_names();
  std::vector<std::string> out;
  for (Index j = 0; j < data.dim(); ++j) out.push_back("g" + std::to_string(j));
  return out;
}

}  // namespace

std::vector<Index> resolve_genes(const std::vector<std::string>& genes, const std::vector<std::string>& names) {
  std::vector<Index> out;
  std::string missing;
  for (const auto& name : names) {
    const auto it = std::find(genes.begin(), genes.end(), name);
    if (it != genes.end()) {
      out.push_back(static_cast<Index>(it - genes.begin()));
      continue;
    }
    std::vector<std::pair<std::size_t, std::string>> near;
    for (const auto& g : genes) near.emplace_back(edit_distance(name, g), g);
    std::stable_sort(near.begin(), near.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    missing += (missing.empty() ? "" : "; ") + std::string("unknown gene '") + name + "'";
    if (!near.empty()) {
      missing += " (did you mean";
      for (std::size_t k = 0; k < std::min<std::size_t>(3, near.size()); ++k)
        missing += (k ? ", " : " ") + near[k].second;
      missing += "?)";
    }
  }
  if (!missing.empty()) throw ConfigError(missing);
  return out;
}

Matrix interaction_weights(const Matrix& a, const PcaBasis& basis, const Vector& x, std::span<const Index> genes) {
  if (x.size() != basis.dx()) throw ShapeError("interaction_weights: x has the wrong length");
  if (a.rows() != basis.dz() || a.cols() != basis.dz()) throw ShapeError("interaction_weights: operator is not d_z x d_z");
  const std::vector<Index> sel = genes.empty() ? all_genes(basis.dx()) : std::vector<Index>(genes.begin(), genes.end());
  const auto s = static_cast<Index>(sel.size());
  Matrix vs(s, basis.dz());
  Vector xs(s);
  for (Index k = 0; k < s; ++k) {
    const Index g = sel[static_cast<std::size_t>(k)];
    if (g < 0 || g >= basis.dx()) throw ConfigError("interaction_weights: gene index out of range");
    vs.row(k) = basis.v.row(g);
    xs[k] = basis.centered ? x[g] - basis.mean[g] : x[g];
  }
  const Matrix w = (vs * a) * vs.transpose();
  return w * xs.asDiagonal();
}

Matrix interaction_weights(const EncoderParams& params, const PcaBasis& basis, const Vector& x, double t,
                           std::span<const Index> genes, std::optional<int> dataset) {
  const EigenOperator op = predict_operator(params, basis.project(x), t, dataset);
  return interaction_weights(assemble(op), basis, x, genes);
}

AggregatedWeights aggregate_weights(const EncoderParams& params, const PcaBasis& basis,
                                    const SnapshotDataset& data, Index n_cells, std::uint64_t seed,
                                    std::span<const Index> genes) {
  if (n_cells < 1) throw ConfigError("aggregate_weights: n_cells must be at least 1");
  if (data.dim() != basis.dx()) throw ShapeError("aggregate_weights: dataset and basis differ in d_x");
  const Index n = data.size();
  Rng rng(substream_seed(seed, "aggregation"));
  std::vector<Index> rows;
  if (n_cells <= n) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (Index k = 0; k < n_cells; ++k) {
      const auto r = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - k)));
      std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(r)]);
    }
    idx.resize(static_cast<std::size_t>(n_cells));
    rows = std::move(idx);
  } else {
    for (Index k = 0; k < n_cells; ++k) rows.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  }

  AggregatedWeights agg;
  agg.genes = genes.empty() ? all_genes(basis.dx()) : std::vector<Index>(genes.begin(), genes.end());
  const auto labels = gene_labels(data);
  for (Index g : agg.genes) agg.names.push_back(labels[static_cast<std::size_t>(g)]);
  const auto s = static_cast<Index>(agg.genes.size());
  const std::optional<int> dataset = params.config.n_datasets > 0 ? data.dataset_id() : std::nullopt;

  const std::size_t n_times = data.grid().size();
  std::vector<Matrix> sums(n_times, Matrix::Zero(s, s));
  std::vector<Index> counts(n_times, 0);
  for (Index r : rows) {
    const double t = data.times()[static_cast<std::size_t>(r)];
    const std::size_t k = data.grid().require_index(t);
    sums[k] += interaction_weights(params, basis, data.x().row(r).transpose(), t, agg.genes, dataset);
    ++counts[k];
  }
  agg.mean = Matrix::Zero(s, s);
  for (std::size_t k = 0; k < n_times; ++k) {
    if (counts[k] == 0) continue;
    agg.mean += sums[k];
    agg.times.push_back(data.grid()[k]);
    agg.mean_by_time.push_back(sums[k] / static_cast<double>(counts[k]));
    agg.cells_by_time.push_back(counts[k]);
  }
  agg.mean /= static_cast<double>(rows.size());
  agg.cells = n_cells;
  agg.seed = seed;
  return agg;
}

std::vector<Index> rank_sources(const Matrix& weights, bool signed_activity) {
  std::vector<double> activity(static_cast<std::size_t>(weights.cols()), 0.0);
  for (Index j = 0; j < weights.cols(); ++j)
    activity[static_cast<std::size_t>(j)] = signed_activity ? weights.col(j).sum() : weights.col(j).cwiseAbs().sum();
  std::vector<Index> order = all_genes(weights.cols());
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return activity[static_cast<std::size_t>(a)] > activity[static_cast<std::size_t>(b)];
  });
  return order;
}

TopSources top_source_genes(const AggregatedWeights& agg, std::size_t k, bool signed_activity) {
  TopSources out;
  for (std::size_t b = 0; b < agg.times.size(); ++b) {
    RankedSources r;
    r.time = agg.times[b];
    const auto order = rank_sources(agg.mean_by_time[b], signed_activity);
    for (std::size_t q = 0; q < std::min(k, order.size()); ++q) {
      const auto& name = agg.names[static_cast<std::size_t>(order[q])];
      r.genes.push_back(name);
      if (std::find(out.union_genes.begin(), out.union_genes.end(), name) == out.union_genes.end())
        out.union_genes.push_back(name);
    }
    out.per_time.push_back(std::move(r));
  }
  return out;
}

// -- Regulatory reference ------------------------------------------------------------

const char* to_string(EdgeMode mode) {
  switch (mode) {
    case EdgeMode::Activation:
      return "Activation";
    case EdgeMode::Repression:
      return "Repression";
    case EdgeMode::Unknown:
      break;
  }
  return "Unknown";
}

RegulatoryDb RegulatoryDb::from_edges(std::vector<RegulatoryEdge> raw) {
  struct Tally {
    std::size_t first = 0;
    int votes[3] = {0, 0, 0};
    std::string refs;
  };
  std::map<std::pair<std::string, std::string>, Tally> tally;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    auto& e = raw[k];
    auto [it, inserted] = tally.try_emplace({e.source, e.target});
    if (inserted) it->second.first = k;
    ++it->second.votes[static_cast<int>(e.mode)];
    if (!e.references.empty()) it->second.refs += (it->second.refs.empty() ? "" : ";") + e.references;
  }
  std::vector<std::pair<std::size_t, RegulatoryEdge>> ordered;
  for (auto& [key, t] : tally) {
    RegulatoryEdge e{key.first, key.second, EdgeMode::Unknown, t.refs};
    const int best = *std::max_element(std::begin(t.votes), std::end(t.votes));
    if (std::count(std::begin(t.votes), std::end(t.votes), best) == 1)
      e.mode = static_cast<EdgeMode>(std::max_element(std::begin(t.votes), std::end(t.votes)) - std::begin(t.votes));
    ordered.emplace_back(t.first, std::move(e));
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  RegulatoryDb db;
  for (auto& [k, e] : ordered) db.edges.push_back(std::move(e));
  return db;
}

std::size_t RegulatoryDb::classifiable() const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [](const auto& e) { return e.mode != EdgeMode::Unknown; }));
}

RegulatoryDb parse_regulatory_db(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<RegulatoryEdge> raw;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4)
      throw ParseError("regulatory db: expected 4 tab-separated columns, found " + std::to_string(cols.size()), line_no);
    if (cols[0].empty() || cols[1].empty()) throw ParseError("regulatory db: empty gene name", line_no);
    RegulatoryEdge e{cols[0], cols[1], EdgeMode::Unknown, cols[3]};
    if (cols[2] == "Activation") {
      e.mode = EdgeMode::Activation;
    } else if (cols[2] == "Repression") {
      e.mode = EdgeMode::Repression;
    } else if (cols[2] != "Unknown") {
      throw ParseError("regulatory db: unknown mode '" + cols[2] + "'", line_no);
    }
    raw.push_back(std::move(e));
  }
  return RegulatoryDb::from_edges(std::move(raw));
}

RegulatoryDb load_regulatory_db(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read regulatory db " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_regulatory_db(ss.str());
}

// -- Classification --------------------------------------------------------------------

void fill_metrics(SourceReport& r) {
  r.precision = r.tp + r.fp ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

InteractionReport classify_edges(const AggregatedWeights& agg, const RegulatoryDb& db, const ClassifyOptions& opts) {
  std::map<std::string, Index> position;
  for (std::size_t k = 0; k < agg.names.size(); ++k) position.emplace(agg.names[k], static_cast<Index>(k));

  std::vector<std::string> sources;
  std::map<std::string, std::vector<const RegulatoryEdge*>> by_source;
  for (const auto& e : db.edges) {
    if (e.mode == EdgeMode::Unknown || !position.count(e.source) || !position.count(e.target)) continue;
    if (!opts.top_sources.empty() &&
        std::find(opts.top_sources.begin(), opts.top_sources.end(), e.source) == opts.top_sources.end())
      continue;
    auto& list = by_source[e.source];
    if (list.empty()) sources.push_back(e.source);
    list.push_back(&e);
  }

  InteractionReport report;
  report.cells = agg.cells;
  report.seed = agg.seed;
  for (const auto& src : sources) {
    const auto& edges = by_source[src];
    if (edges.size() <= opts.min_edges) continue;
    SourceReport r;
    r.gene = src;
    r.edges = edges.size();
    const Index j = position[src];
    for (const auto* e : edges) {
      EdgeCall c;
      c.target = e->target;
      c.label = e->mode;
      c.mean_weight = agg.mean(position[e->target], j);
      c.predicted = c.mean_weight > 0.0 ? EdgeMode::Activation : EdgeMode::Repression;
      const bool pred_pos = c.predicted == EdgeMode::Activation;
      const bool label_pos = c.label == EdgeMode::Activation;
      if (pred_pos && label_pos) ++r.tp;
      if (pred_pos && !label_pos) ++r.fp;
      if (!pred_pos && label_pos) ++r.fn;
      if (!pred_pos && !label_pos) ++r.tn;
      r.calls.push_back(std::move(c));
    }
    fill_metrics(r);
    report.sources.push_back(std::move(r));
  }
  return report;
}

NullDistribution random_sign_null(std::span<const EdgeMode> labels, int resamples, std::uint64_t seed) {
  if (resamples < 1) throw ConfigError("random_sign_null: resamples must be positive");
  Rng rng(seed);
  double sum = 0.0;
  double sq = 0.0;
  for (int s = 0; s < resamples; ++s) {
    SourceReport r;
    for (EdgeMode label : labels) {
      if (label == EdgeMode::Unknown) continue;
      const bool pred_pos = rng.below(2) == 1;
      const bool label_pos = label == EdgeMode::Activation;
      r.tp += pred_pos && label_pos;
      r.fp += pred_pos && !label_pos;
      r.fn += !pred_pos && label_pos;
      r.tn += !pred_pos && !label_pos;
    }
    fill_metrics(r);
    sum += r.f1;
    sq += r.f1 * r.f1;
  }
  NullDistribution out;
  out.mean_f1 = sum / resamples;
  out.std_f1 = resamples > 1 ? std::sqrt(std::max(0.0, (sq - resamples * out.mean_f1 * out.mean_f1) / (resamples - 1))) : 0.0;
  return out;
}

std::vector<EnsembleSource> summarize_ensemble(std::span<const InteractionReport> reports) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SourceReport*>> by_gene;
  for (const auto& r : reports)
    for (const auto& s : r.sources) {
      auto& list = by_gene[s.gene];
      if (list.empty()) order.push_back(s.gene);
      list.push_back(&s);
    }
  auto stats = [](const std::vector<const SourceReport*>& list, double SourceReport::*field) {
    MeanStd m;
    for (const auto* s : list) m.mean += s->*field;
    const auto n = static_cast<double>(list.size());
    m.mean /= n;
    if (list.size() > 1) {
      double sq = 0.0;
      for (const auto* s : list) sq += (s->*field - m.mean) * (s->*field - m.mean);
      m.std = std::sqrt(sq / (n - 1.0));
    }
    return m;
  };
  std::vector<EnsembleSource> out;
  for (const auto& gene : order) {
    const auto& list = by_gene[gene];
    out.push_back({gene, list.size(), stats(list, &SourceReport::precision), stats(list, &SourceReport::recall),
                   stats(list, &SourceReport::f1)});
  }
  return out;
}

std::string InteractionReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "# cells=" << cells << ",seed=" << seed << '\n';
  os << "source,edges,precision,recall,f1\n";
  for (const auto& s : sources) os << s.gene << ',' << s.edges << ',' << s.precision << ',' << s.recall << ',' << s.f1 << '\n';
  return os.str();
}

std::string InteractionReport::to_json() const {
  nlohmann::json j;
  j["cells"] = cells;
  j["seed"] = seed;
  j["sources"] = nlohmann::json::array();
  for (const auto& s : sources) {
    nlohmann::json calls = nlohmann::json::array();
    for (const auto& c : s.calls)
      calls.push_back({{"target", c.target},
                       {"label", to_string(c.label)},
                       {"predicted", to_string(c.predicted)},
                       {"mean_weight", c.mean_weight}});
    j["sources"].push_back({{"gene", s.gene},
                            {"edges", s.edges},
                            {"tp", s.tp},
                            {"fp", s.fp},
                            {"fn", s.fn},
                            {"tn", s.tn},
                            {"precision", s.precision},
                            {"recall", s.recall},
                            {"f1", s.f1},
                            {"calls", calls}});
  }
  return j.dump(2);
}

void export_operators(const EncoderParams& params, const PcaBasis& basis, const SnapshotDataset& data,
                      Index n_cells, std::uint64_t seed, const std::vector<std::string>& markers,
                      const std::filesystem::path& path) {
  if (n_cells < 1) throw ConfigError("export_operators: n_cells must be at least 1");
  const auto marker_idx = resolve_genes(gene_labels(data), markers);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  const Index dz = basis.dz();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "time";
  for (Index r = 0; r < dz; ++r)
    for (Index c = 0; c < dz; ++c) out << ",a_" << r << '_' << c;
  for (const auto& m : markers) out << ',' << m;
  out << '\n';

  Rng rng(substream_seed(seed, "export"));
  const std::optional<int> dataset = params.config.n_datasets > 0 ? data.dataset_id() : std::nullopt;
  for (Index k = 0; k < n_cells; ++k) {
    const auto row = static_cast<Index>(rng.below(static_cast<std::uint64_t>(data.size())));
    const double t = data.times()[static_cast<std::size_t>(row)];
    const Vector x = data.x().row(row).transpose();
    const Matrix a = assemble(predict_operator(params, basis.project(x), t, dataset));
    out << t;
    for (Index r = 0; r < dz; ++r)
      for (Index c = 0; c < dz; ++c) out << ',' << a(r, c);
    for (Index g : marker_idx) out << ',' << x[g];
    out << '\n';
  }
  if (!out) throw ConfigError("error while writing " + path.string());
}

}  // namespace cellmnn
