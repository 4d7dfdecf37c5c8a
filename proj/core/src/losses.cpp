// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/losses.hpp"

#include "cellmnn/error.hpp"

#include <cmath>

namespace cellmnn {

void LossConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("loss: sigma must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("loss: gamma must lie in [0, 1]");
  if (lambda_kin < 0.0 || lambda_inv < 0.0) throw ConfigError("loss: weights must be non-negative");
  if (eps_kernel < 0.0 || eps_inv < 0.0) throw ConfigError("loss: eps must be non-negative");
}

double laplacian_kernel(const Vector& a, const Vector& b, double sigma, double eps) {
  if (a.size() != b.size()) throw ShapeError("laplacian_kernel: vectors differ in length");
  double l1 = 0.0;
  for (Index k = 0; k < a.size(); ++k) l1 += std::abs(a[k] - b[k]);
  return std::exp(-std::max(l1, eps) / (sigma * static_cast<double>(a.size())));
}

KernelFn laplacian(const LossConfig& cfg) {
  return [sigma = cfg.sigma, eps = cfg.eps_kernel](const Vector& a, const Vector& b) {
    return laplacian_kernel(a, b, sigma, eps);
  };
}

KernelFn pullback_kernel(const PcaBasis& basis, const LossConfig& cfg) {
  return [basis, sigma = cfg.sigma, eps = cfg.eps_kernel](const Vector& x, const Vector& y) {
    return laplacian_kernel(basis.project(x), basis.project(y), sigma, eps);
  };
}

namespace {

double kernel_sum(const Matrix& a, const Matrix& b, const KernelFn& k, bool skip_diagonal) {
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    const Vector ai = a.row(i).transpose();
    for (Index j = 0; j < b.rows(); ++j) {
      if (skip_diagonal && i == j) continue;
      total += k(ai, b.row(j).transpose());
    }
  }
  return total;
}

}  // namespace

double mmd2(const Matrix& xs, const Matrix& ys, const KernelFn& kernel, bool unbiased) {
  if (xs.rows() == 0 || ys.rows() == 0) throw ConfigError("mmd2: empty sample set");
  if (xs.cols() != ys.cols()) throw ShapeError("mmd2: sample sets differ in dimension");
  const auto n = static_cast<double>(xs.rows());
  const auto m = static_cast<double>(ys.rows());
  if (unbiased) {
    if (xs.rows() < 2 || ys.rows() < 2) throw ConfigError("mmd2: unbiased estimator needs two samples per set");
    return kernel_sum(xs, xs, kernel, true) / (n * (n - 1.0)) +
           kernel_sum(ys, ys, kernel, true) / (m * (m - 1.0)) -
           2.0 * kernel_sum(xs, ys, kernel, false) / (n * m);
  }
  return kernel_sum(xs, xs, kernel, false) / (n * n) + kernel_sum(ys, ys, kernel, false) / (m * m) -
         2.0 * kernel_sum(xs, ys, kernel, false) / (n * m);
}

double laplacian_gram_mean(const Matrix& xs, const Matrix& ys, const LossConfig& cfg) {
  if (xs.cols() != ys.cols()) throw ShapeError("laplacian_gram_mean: dimension mismatch");
  const Index d = xs.cols();
  const double inv_scale = 1.0 / (cfg.sigma * static_cast<double>(d));
  double total = 0.0;
  for (Index j = 0; j < ys.rows(); ++j) {
    double col = 0.0;
    for (Index i = 0; i < xs.rows(); ++i) {
      double l1 = 0.0;
      for (Index k = 0; k < d; ++k) l1 += std::abs(xs(i, k) - ys(j, k));
      col += std::exp(-std::max(l1, cfg.eps_kernel) * inv_scale);
    }
    total += col;
  }
  return total / (static_cast<double>(xs.rows()) * static_cast<double>(ys.rows()));
}

double mmd2_laplacian(const Matrix& xs, const Matrix& ys, const LossConfig& cfg) {
  if (xs.rows() == 0 || ys.rows() == 0) throw ConfigError("mmd2: empty sample set");
  if (cfg.unbiased_mmd) return mmd2(xs, ys, laplacian(cfg), true);
  return laplacian_gram_mean(xs, xs, cfg) + laplacian_gram_mean(ys, ys, cfg) -
         2.0 * laplacian_gram_mean(xs, ys, cfg);
}

namespace {

diff::Var gram_term(const diff::Var& a, const diff::Var& b, bool same_set, const LossConfig& cfg) {
  const double inv_scale = 1.0 / (cfg.sigma * static_cast<double>(a.cols()));
  diff::Var k = diff::exp(diff::scale(diff::max_const(diff::pairwise_l1(a, b), cfg.eps_kernel), -inv_scale));
  if (same_set && cfg.unbiased_mmd) {
    const auto n = static_cast<double>(a.rows());
    const double diag = std::exp(-cfg.eps_kernel * inv_scale);
    return diff::scale(diff::add_const(diff::sum(k), -n * diag), 1.0 / (n * (n - 1.0)));
  }
  return diff::mean(k);
}

double gram_value(const Matrix& a, const Matrix& b, bool same_set, const LossConfig& cfg) {
  if (same_set && cfg.unbiased_mmd) {
    const auto n = static_cast<double>(a.rows());
    const double diag = std::exp(-cfg.eps_kernel / (cfg.sigma * static_cast<double>(a.cols())));
    return (laplacian_gram_mean(a, a, cfg) * n * n - n * diag) / (n * (n - 1.0));
  }
  return laplacian_gram_mean(a, b, cfg);
}

}  // namespace

diff::Var mmd2_graph(const diff::Var& xs, const diff::Var& ys, const LossConfig& cfg) {
  if (xs.rows() == 0 || ys.rows() == 0) throw ConfigError("mmd2: empty sample set");
  if (xs.cols() != ys.cols()) throw ShapeError("mmd2: sample sets differ in dimension");
  diff::Tape& tape = *xs.tape();
  auto term = [&](const diff::Var& a, const diff::Var& b, bool same) {
    if (!a.requires_grad() && !b.requires_grad())
      return tape.constant(gram_value(a.value(), b.value(), same, cfg));
    return gram_term(a, b, same, cfg);
  };
  diff::Var kxx = term(xs, xs, true);
  diff::Var kyy = term(ys, ys, true);
  diff::Var kxy = term(xs, ys, false);
  return diff::sub(diff::add(kxx, kyy), diff::scale(kxy, 2.0));
}

// -- Batch plans -------------------------------------------------------------

namespace {

bool is_heldout(double t, std::optional<double> heldout) {
  return heldout && std::abs(*heldout - t) <= 1e-9 * std::max(1.0, std::abs(t));
}

std::vector<double> targets_for(const TimeGrid& grid, double source, std::optional<double> heldout,
                                const LossConfig& cfg) {
  std::vector<double> out;
  for (double t : grid.values()) {
    if (is_heldout(t, heldout)) continue;
    if (t > source || (cfg.include_self_term && t == source)) out.push_back(t);
  }
  return out;
}

}  // namespace

std::vector<double> usable_sources(const TimeGrid& grid, std::optional<double> heldout,
                                   const LossConfig& cfg) {
  std::size_t kept = 0;
  for (double t : grid.values())
    if (!is_heldout(t, heldout)) ++kept;
  if (kept < 2)
    throw ConfigError("loss: need at least two non-held-out grid times, have " + std::to_string(kept));
  std::vector<double> out;
  for (double t : grid.values()) {
    if (is_heldout(t, heldout)) continue;
    if (!targets_for(grid, t, heldout, cfg).empty()) out.push_back(t);
  }
  return out;
}

BatchPlan plan_batches(const LatentMarginals& marginals, std::optional<double> heldout,
                       Index batch, const LossConfig& cfg, BatchSampler& sampler) {
  if (heldout && !marginals.grid.index_of(*heldout))
    throw ConfigError("loss: held-out time is not on the grid");
  BatchPlan plan;
  plan.dataset = marginals.dataset_id;
  for (double t : usable_sources(marginals.grid, heldout, cfg)) {
    BatchPlan::Source s;
    s.t = t;
    s.z = sampler.sample(t, batch);
    for (double tt : targets_for(marginals.grid, t, heldout, cfg)) s.targets.push_back({tt, sampler.sample(tt, batch)});
    plan.sources.push_back(std::move(s));
  }
  return plan;
}

// -- Loss terms -----------------------------------------------------------------

MarginalMatching marginal_matching_loss(const BoundEncoder& encoder, const BatchPlan& plan,
                                        const LossConfig& cfg) {
  cfg.validate();
  if (plan.sources.empty()) throw ConfigError("loss: empty batch plan");
  diff::Tape& tape = encoder.tape();
  MarginalMatching out;
  std::vector<diff::Var> terms;

  for (const auto& source : plan.sources) {
    OperatorNodes ops = predict_operator_nodes(encoder, source.z, source.t, plan.dataset);
    const Index b = source.z.rows();
    std::vector<diff::Var> coeffs;  // P^-1 z per sample
    coeffs.reserve(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i)
      coeffs.push_back(diff::matvec(ops.basis_inv[static_cast<std::size_t>(i)],
                                    tape.constant(source.z.row(i).transpose())));

    for (const auto& target : source.targets) {
      const double dt = target.t - source.t;
      PushedBatch pushed;
      pushed.source_t = source.t;
      pushed.target_t = target.t;
      std::vector<diff::Var> states;
      states.reserve(static_cast<std::size_t>(b));
      for (Index i = 0; i < b; ++i) {
        const auto k = static_cast<std::size_t>(i);
        diff::Var w = coeffs[k];
        if (dt != 0.0) {
          w = diff::cwise_mul(diff::exp(diff::scale(ops.eigenvalues[k], dt)), coeffs[k]);
          states.push_back(diff::matvec(ops.basis[k], w));
        }
        pushed.velocities.push_back(diff::matvec(ops.basis[k], diff::cwise_mul(ops.eigenvalues[k], w)));
      }
      // At dt = 0 the prediction is the input batch itself.
      pushed.states = dt == 0.0 ? tape.constant(source.z) : diff::rows_from(states);

      const double exponent = cfg.discount_by_lag ? dt : target.t;
      const double weight = std::pow(cfg.gamma, exponent);
      if (weight != 0.0)
        terms.push_back(diff::scale(mmd2_graph(pushed.states, tape.constant(target.y), cfg), weight));
      out.pushed.push_back(std::move(pushed));
    }
    out.operators.push_back(std::move(ops));
  }

  const double per_source = 1.0 / static_cast<double>(plan.sources.size());
  out.loss = terms.empty() ? tape.constant(0.0) : diff::scale(diff::add_n(terms), per_source);
  return out;
}

diff::Var kinetic_loss(const MarginalMatching& matching) {
  std::vector<diff::Var> energies;
  for (const auto& p : matching.pushed)
    for (const auto& v : p.velocities) energies.push_back(diff::l2_norm_sq(v));
  if (energies.empty()) throw ConfigError("kinetic_loss: no pushed states");
  return diff::scale(diff::add_n(energies), 1.0 / static_cast<double>(energies.size()));
}

diff::Var invertibility_loss(std::span<const diff::Var> dets, const LossConfig& cfg) {
  if (dets.empty()) throw ConfigError("invertibility_loss: no operators");
  std::vector<diff::Var> terms;
  terms.reserve(dets.size());
  for (const auto& d : dets) {
    diff::Var base = cfg.signed_inverse_penalty ? d : diff::abs(d);
    terms.push_back(diff::reciprocal(diff::add_const(base, cfg.eps_inv)));
  }
  return diff::scale(diff::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

LossTerms total_loss(const BoundEncoder& encoder, const BatchPlan& plan, const LossConfig& cfg) {
  MarginalMatching matching = marginal_matching_loss(encoder, plan, cfg);
  std::vector<diff::Var> dets;
  for (const auto& ops : matching.operators) dets.insert(dets.end(), ops.basis_det.begin(), ops.basis_det.end());

  LossTerms terms;
  terms.mmd = matching.loss;
  terms.kinetic = kinetic_loss(matching);
  terms.inverse = invertibility_loss(dets, cfg);
  const std::vector<diff::Var> parts{terms.mmd, diff::scale(terms.kinetic, cfg.lambda_kin),
                                     diff::scale(terms.inverse, cfg.lambda_inv)};
  terms.total = diff::add_n(parts);
  terms.basis_dets.reserve(dets.size());
  for (const auto& d : dets) terms.basis_dets.push_back(d.scalar());
  return terms;
}

double kinetic_loss(std::span<const EigenOperator> ops, const Matrix& states) {
  if (ops.empty() || static_cast<Index>(ops.size()) != states.rows())
    throw ConfigError("kinetic_loss: need one operator per state");
  double total = 0.0;
  for (std::size_t i = 0; i < ops.size(); ++i)
    total += FactoredOperator(ops[i]).velocity(states.row(static_cast<Index>(i)).transpose()).squaredNorm();
  return total / static_cast<double>(ops.size());
}

double invertibility_loss(std::span<const EigenOperator> ops, const LossConfig& cfg) {
  if (ops.empty()) throw ConfigError("invertibility_loss: no operators");
  double total = 0.0;
  for (const auto& op : ops) {
    const double d = Eigen::PartialPivLU<Matrix>(op.basis).determinant();
    total += 1.0 / ((cfg.signed_inverse_penalty ? d : std::abs(d)) + cfg.eps_inv);
  }
  return total / static_cast<double>(ops.size());
}

}  // namespace cellmnn
