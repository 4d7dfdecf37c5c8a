// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/eval.hpp"

#include "cellmnn/error.hpp"
#include "cellmnn/parallel.hpp"
#include "cellmnn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace cellmnn {

Matrix euclidean_cost(const Matrix& xs, const Matrix& ys) {
  if (xs.cols() != ys.cols()) throw ShapeError("euclidean_cost: clouds differ in dimension");
  Matrix c(xs.rows(), ys.rows());
  for (Index i = 0; i < xs.rows(); ++i)
    for (Index j = 0; j < ys.rows(); ++j) c(i, j) = (xs.row(i) - ys.row(j)).norm();
  return c;
}

TransportPlan exact_transport(const Matrix& xs, const Matrix& ys, const std::optional<Vector>& wx,
                              const std::optional<Vector>& wy) {
  if (xs.rows() == 0 || ys.rows() == 0) throw ConfigError("emd: zero-mass input");
  if (wx && wx->size() != xs.rows()) throw ShapeError("emd: weight count differs from point count");
  if (wy && wy->size() != ys.rows()) throw ShapeError("emd: weight count differs from point count");
  const Matrix cost = euclidean_cost(xs, ys);
  const auto n = static_cast<std::int64_t>(xs.rows());
  const auto m = static_cast<std::int64_t>(ys.rows());
  std::vector<std::int64_t> supply;
  std::vector<std::int64_t> demand;
  if (!wx && !wy) {
    const std::int64_t g = std::gcd(n, m);
    supply.assign(static_cast<std::size_t>(n), m / g);
    demand.assign(static_cast<std::size_t>(m), n / g);
  } else {
    constexpr std::int64_t kTotal = 1'000'000'000;
    try {
      supply = integer_masses(wx ? *wx : Vector::Ones(xs.rows()), kTotal);
      demand = integer_masses(wy ? *wy : Vector::Ones(ys.rows()), kTotal);
    } catch (const ConfigError&) {
      throw ConfigError("emd: zero-mass input");
    }
  }
  return solve_transport(cost, supply, demand);
}

double emd_exact(const Matrix& xs, const Matrix& ys, const std::optional<Vector>& wx,
                 const std::optional<Vector>& wy) {
  return exact_transport(xs, ys, wx, wy).cost;
}

// -- MMD metric ------------------------------------------------------------------

namespace {

Matrix subsample_rows(const Matrix& x, Index cap, std::uint64_t seed) {
  if (cap <= 0 || x.rows() <= cap) return x;
  std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(seed);
  for (Index k = 0; k < cap; ++k) {
    const auto r = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(x.rows() - k)));
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(r)]);
  }
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  Matrix out(cap, x.cols());
  for (Index k = 0; k < cap; ++k) out.row(k) = x.row(idx[static_cast<std::size_t>(k)]);
  return out;
}

// Sum of kernel values over all pairs, by tiles reduced in tile order.
double blocked_gram_sum(const Matrix& a, const Matrix& b, const LossConfig& cfg, Index block, int threads) {
  const Index d = a.cols();
  const double inv_scale = 1.0 / (cfg.sigma * static_cast<double>(d));
  const Index na = (a.rows() + block - 1) / block;
  const Index nb = (b.rows() + block - 1) / block;
  std::vector<double> tiles(static_cast<std::size_t>(na * nb), 0.0);
  parallel_for(
      tiles.size(),
      [&](std::size_t t) {
        const Index bi = static_cast<Index>(t) / nb;
        const Index bj = static_cast<Index>(t) % nb;
        const Index i_end = std::min(a.rows(), (bi + 1) * block);
        const Index j_end = std::min(b.rows(), (bj + 1) * block);
        double acc = 0.0;
        for (Index i = bi * block; i < i_end; ++i) {
          for (Index j = bj * block; j < j_end; ++j) {
            double l1 = 0.0;
            for (Index k = 0; k < d; ++k) l1 += std::abs(a(i, k) - b(j, k));
            acc += std::exp(-std::max(l1, cfg.eps_kernel) * inv_scale);
          }
        }
        tiles[t] = acc;
      },
      threads);
  double total = 0.0;
  for (double v : tiles) total += v;
  return total;
}

}  // namespace

double mmd_metric(const Matrix& xs_in, const Matrix& ys_in, const LossConfig& cfg, const MmdOptions& opts) {
  if (xs_in.rows() == 0 || ys_in.rows() == 0) throw ConfigError("mmd2: empty sample set");
  if (xs_in.cols() != ys_in.cols()) throw ShapeError("mmd2: sample sets differ in dimension");
  if (opts.block < 1) throw ConfigError("mmd_metric: block must be positive");
  const Matrix xs = subsample_rows(xs_in, opts.max_points, substream_seed(opts.seed, "mmd/x"));
  const Matrix ys = subsample_rows(ys_in, opts.max_points, substream_seed(opts.seed, "mmd/y"));
  const auto n = static_cast<double>(xs.rows());
  const auto m = static_cast<double>(ys.rows());
  const double kxx = blocked_gram_sum(xs, xs, cfg, opts.block, opts.threads);
  const double kyy = blocked_gram_sum(ys, ys, cfg, opts.block, opts.threads);
  const double kxy = blocked_gram_sum(xs, ys, cfg, opts.block, opts.threads);
  if (cfg.unbiased_mmd) {
    if (xs.rows() < 2 || ys.rows() < 2) throw ConfigError("mmd2: unbiased estimator needs two samples per set");
    const double diag = std::exp(-cfg.eps_kernel / (cfg.sigma * static_cast<double>(xs.cols())));
    return (kxx - n * diag) / (n * (n - 1.0)) + (kyy - m * diag) / (m * (m - 1.0)) - 2.0 * kxy / (n * m);
  }
  return kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m);
}

// -- Sinkhorn ----------------------------------------------------------------------

SinkhornResult sinkhorn_coupling(const Matrix& xs, const Matrix& ys, double reg, int max_iter, double tol) {
  if (!(reg > 0.0)) throw ConfigError("sinkhorn: reg must be positive");
  if (xs.rows() == 0 || ys.rows() == 0) throw ConfigError("sinkhorn: empty cloud");
  const Matrix c = euclidean_cost(xs, ys);
  const Index n = c.rows();
  const Index m = c.cols();
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  // Scaled negative cost, so each potential update is one log-sum-exp pass.
  const Eigen::ArrayXXd kr = -c.array() / reg;
  Eigen::ArrayXd f = Eigen::ArrayXd::Zero(n);
  Eigen::ArrayXd g = Eigen::ArrayXd::Zero(m);

  auto row_lse = [&] {
    const Eigen::ArrayXXd t = kr.rowwise() + (g / reg).transpose();
    const Eigen::ArrayXd mx = t.rowwise().maxCoeff();
    return Eigen::ArrayXd(mx + (t.colwise() - mx).exp().rowwise().sum().log());
  };
  auto col_lse = [&] {
    const Eigen::ArrayXXd t = kr.colwise() + f / reg;
    const Eigen::Array<double, 1, Eigen::Dynamic> mx = t.colwise().maxCoeff();
    return Eigen::ArrayXd((mx + (t.rowwise() - mx).exp().colwise().sum().log()).transpose());
  };
  // Column sums are exact after a g update; rows carry the error.
  auto row_error = [&](const Eigen::ArrayXd& lse) { return ((f / reg + lse).exp() - std::exp(log_a)).abs().sum(); };

  SinkhornResult out;
  double err = std::numeric_limits<double>::infinity();
  int it = 0;
  Eigen::ArrayXd lse = row_lse();
  while (it < max_iter) {
    f = reg * (log_a - lse);
    g = reg * (log_b - col_lse());
    ++it;
    lse = row_lse();
    err = row_error(lse);
    if (err <= tol) break;
  }
  out.iterations = it;
  out.marginal_error = err;
  out.converged = err <= tol;
  out.coupling.resize(n, m);
  out.coupling = ((kr.colwise() + f / reg).rowwise() + (g / reg).transpose()).exp().matrix();
  out.cost = (out.coupling.array() * c.array()).sum();
  return out;
}

// -- Baselines -----------------------------------------------------------------------

namespace {

struct Neighbours {
  double prev;
  double next;
};

Neighbours neighbours(const TimeGrid& grid, double heldout) {
  const auto k = grid.index_of(heldout);
  if (!k) throw ConfigError("baseline: held-out time is not on the grid");
  if (*k == 0 || *k + 1 >= grid.size()) throw ConfigError("baseline: held-out time must be interior to the grid");
  return {grid[*k - 1], grid[*k + 1]};
}

double median_of(const Matrix& c) {
  std::vector<double> v(c.data(), c.data() + c.size());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

double interpolation_alpha(const TimeGrid& grid, double heldout) {
  const auto nb = neighbours(grid, heldout);
  return (heldout - nb.prev) / (nb.next - nb.prev);
}

Matrix persistence_baseline(const LatentMarginals& marginals, double heldout) {
  return marginals.at(neighbours(marginals.grid, heldout).prev);
}

Matrix ot_interpolate_baseline(const LatentMarginals& marginals, double heldout, const BaselineOptions& opts) {
  const auto nb = neighbours(marginals.grid, heldout);
  const double alpha = (heldout - nb.prev) / (nb.next - nb.prev);
  const Matrix& xp = marginals.at(nb.prev);
  const Matrix& xn = marginals.at(nb.next);
  const Index n_out = opts.n_out > 0 ? opts.n_out : xp.rows();
  Matrix out(n_out, xp.cols());
  Rng rng(substream_seed(opts.seed, "ot-interpolate"));
  auto emit = [&](Index k, Index i, Index j) { out.row(k) = (1.0 - alpha) * xp.row(i) + alpha * xn.row(j); };

  if (xp.rows() <= opts.exact_limit && xn.rows() <= opts.exact_limit) {
    const TransportPlan plan = exact_transport(xp, xn);
    // Systematic resampling on the integer masses: point k sits at
    // floor((k T + offset) / N) in [0, T).
    const auto total = static_cast<__int128_t>(plan.total);
    const auto offset = static_cast<__int128_t>(rng.below(static_cast<std::uint64_t>(plan.total)));
    std::size_t e = 0;
    __int128_t upper = plan.entries.front().flow;
    for (Index k = 0; k < n_out; ++k) {
      const __int128_t pos = (static_cast<__int128_t>(k) * total + offset) / n_out;
      while (pos >= upper) upper += plan.entries[++e].flow;
      emit(k, plan.entries[e].i, plan.entries[e].j);
    }
    return out;
  }

  const double reg = opts.sinkhorn_scale * median_of(euclidean_cost(xp, xn));
  const SinkhornResult sk = sinkhorn_coupling(xp, xn, std::max(reg, 1e-12), 1000, 1e-6);
  const double mass = sk.coupling.sum();
  const double u = rng.uniform();
  Index i = 0;
  Index j = 0;
  double upper = sk.coupling(0, 0);
  for (Index k = 0; k < n_out; ++k) {
    const double pos = (static_cast<double>(k) + u) / static_cast<double>(n_out) * mass;
    while (pos >= upper && (i + 1 < sk.coupling.rows() || j + 1 < sk.coupling.cols())) {
      if (++j == sk.coupling.cols()) {
        j = 0;
        ++i;
      }
      upper += sk.coupling(i, j);
    }
    emit(k, i, j);
  }
  return out;
}

// -- Scoring ---------------------------------------------------------------------------

Matrix predict_heldout(const EncoderParams& params, const LatentMarginals& marginals, double heldout,
                       const EvalOptions& opts) {
  const auto nb = neighbours(marginals.grid, heldout);
  const std::optional<int> dataset = params.config.n_datasets > 0 ? marginals.dataset_id : std::nullopt;
  if (!opts.from_start) {
    return push_latent_rows(params, marginals.at(nb.prev), nb.prev, heldout - nb.prev, dataset);
  }
  const double t0 = marginals.grid[0];
  std::vector<double> targets;
  for (double t : marginals.grid.values())
    if (t > t0 && t <= heldout) targets.push_back(t);
  const Matrix& z0 = marginals.at(t0);
  Matrix out(z0.rows(), z0.cols());
  for (Index i = 0; i < z0.rows(); ++i) {
    const auto states = rollout(params, z0.row(i).transpose(), t0, targets, dataset, opts.relinearize_every);
    out.row(i) = states.back().transpose();
  }
  return out;
}

double score_prediction(const Matrix& predicted, const Matrix& truth, const EvalOptions& opts) {
  if (opts.mode == EvalMode::Emd) return emd_exact(predicted, truth);
  return mmd_metric(predicted, truth, opts.loss, opts.mmd);
}

EvalEntry evaluate_heldout(const EncoderParams& params, const LatentMarginals& marginals, double heldout,
                           const EvalOptions& opts) {
  EvalEntry e;
  e.dataset = marginals.dataset_id.value_or(0);
  e.heldout_t = heldout;
  e.seed = opts.mmd.seed;
  e.method = "cellmnn";
  e.metric = opts.mode == EvalMode::Emd ? "emd" : "mmd";
  e.score = score_prediction(predict_heldout(params, marginals, heldout, opts), marginals.at(heldout), opts);
  return e;
}

// -- Reports ---------------------------------------------------------------------------

std::vector<EvalSummary> EvalReport::summary() const {
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& e : entries) {
    auto key = std::make_pair(e.method, e.metric);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(e.score);
  }
  std::vector<EvalSummary> out;
  for (const auto& key : order) {
    const auto& v = groups[key];
    EvalSummary s{key.first, key.second, 0.0, 0.0, v.size()};
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    out.push_back(s);
  }
  return out;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "# std_axis=" << std_axis << '\n';
  os << "dataset,heldout_t,seed,method,metric,score\n";
  for (const auto& e : entries)
    os << e.dataset << ',' << e.heldout_t << ',' << e.seed << ',' << e.method << ',' << e.metric << ','
       << e.score << '\n';
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["std_axis"] = std_axis;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"dataset", e.dataset},
                            {"heldout_t", e.heldout_t},
                            {"seed", e.seed},
                            {"method", e.method},
                            {"metric", e.metric},
                            {"score", e.score}});
  j["summary"] = nlohmann::json::array();
  for (const auto& s : summary())
    j["summary"].push_back(
        {{"method", s.method}, {"metric", s.metric}, {"mean", s.mean}, {"std", s.stddev}, {"count", s.count}});
  return j.dump(2);
}

}  // namespace cellmnn
