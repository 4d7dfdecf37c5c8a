// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Uncapacitated primal network simplex on the complete bipartite graph
// sources -> sinks, with one artificial arc per node to an extra root.
// The spanning tree is kept in thread order (parent, pred, thread,
// rev_thread, succ_num, last_succ), and the leaving arc is chosen with the
// strongly-feasible rule so degenerate pivots cannot cycle.

#include "cellmnn/emd.hpp"

#include "cellmnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cellmnn {

namespace {

constexpr int kUp = 1;
constexpr int kDown = -1;
constexpr signed char kLower = 1;
constexpr signed char kTree = 0;

class NetworkSimplex {
 public:
  NetworkSimplex(const Matrix& cost, std::span<const std::int64_t> supply,
                 std::span<const std::int64_t> demand)
      : n_(static_cast<int>(cost.rows())),
        m_(static_cast<int>(cost.cols())),
        node_num_(n_ + m_),
        arc_num_(static_cast<long>(n_) * m_),
        root_(node_num_),
        cost_(cost) {
    const long all_arcs = arc_num_ + node_num_;
    flow_.assign(static_cast<std::size_t>(all_arcs), 0);
    state_.assign(static_cast<std::size_t>(arc_num_), kLower);

    double max_cost = 0.0;
    for (Eigen::Index k = 0; k < cost.size(); ++k) max_cost = std::max(max_cost, std::abs(cost.data()[k]));
    art_cost_ = (max_cost + 1.0) * static_cast<double>(node_num_);
    tol_ = 1e-12 * (max_cost + 1.0);

    const auto nodes = static_cast<std::size_t>(node_num_ + 1);
    parent_.assign(nodes, 0);
    pred_.assign(nodes, 0);
    pred_dir_.assign(nodes, kUp);
    thread_.assign(nodes, 0);
    rev_thread_.assign(nodes, 0);
    succ_num_.assign(nodes, 1);
    last_succ_.assign(nodes, 0);
    pi_.assign(nodes, 0.0);
    art_forward_.assign(static_cast<std::size_t>(node_num_), true);

    for (int u = 0; u < node_num_; ++u) {
      const std::int64_t s = u < n_ ? supply[static_cast<std::size_t>(u)]
                                    : -demand[static_cast<std::size_t>(u - n_)];
      const long e = arc_num_ + u;
      parent_[u] = root_;
      pred_[u] = e;
      thread_[u] = u + 1;
      rev_thread_[u + 1] = u;
      succ_num_[u] = 1;
      last_succ_[u] = u;
      if (s >= 0) {
        art_forward_[u] = true;  // u -> root, cost 0
        pred_dir_[u] = kUp;
        pi_[u] = 0.0;
        flow_[e] = s;
      } else {
        art_forward_[u] = false;  // root -> u, cost art_cost
        pred_dir_[u] = kDown;
        pi_[u] = art_cost_;
        flow_[e] = -s;
      }
    }
    parent_[root_] = -1;
    pred_[root_] = -1;
    thread_[root_] = 0;
    rev_thread_[0] = root_;
    succ_num_[root_] = node_num_ + 1;
    last_succ_[root_] = root_ - 1;
    pi_[root_] = 0.0;

    block_size_ = std::max<long>(10, static_cast<long>(std::sqrt(static_cast<double>(arc_num_))));
  }

  long run() {
    long pivots = 0;
    while (find_entering_arc()) {
      find_join_node();
      const bool change = find_leaving_arc();
      change_flow(change);
      if (change) {
        update_tree_structure();
        update_potential();
      }
      ++pivots;
    }
    for (int u = 0; u < node_num_; ++u)
      if (flow_[arc_num_ + u] != 0) throw ConfigError("transport: supplies and demands are not balanced");
    return pivots;
  }

  std::int64_t flow(long e) const { return flow_[static_cast<std::size_t>(e)]; }

 private:
  int source(long e) const { return e < arc_num_ ? static_cast<int>(e / m_) : art_source(e); }
  int target(long e) const { return e < arc_num_ ? n_ + static_cast<int>(e % m_) : art_target(e); }
  int art_source(long e) const {
    const int u = static_cast<int>(e - arc_num_);
    return art_forward_[u] ? u : root_;
  }
  int art_target(long e) const {
    const int u = static_cast<int>(e - arc_num_);
    return art_forward_[u] ? root_ : u;
  }
  double cost(long e) const {
    if (e < arc_num_) return cost_(e / m_, e % m_);
    return art_forward_[static_cast<std::size_t>(e - arc_num_)] ? 0.0 : art_cost_;
  }
  double reduced(long e) const {
    const int i = static_cast<int>(e / m_);
    const int j = static_cast<int>(e % m_);
    return cost_(i, j) + pi_[i] - pi_[n_ + j];
  }

  bool find_entering_arc() {
    double best = -tol_;
    long count = block_size_;
    long e = next_arc_;
    bool found = false;
    for (long k = 0; k < arc_num_; ++k) {
      if (state_[e] == kLower) {
        const double c = reduced(e);
        if (c < best) {
          best = c;
          in_arc_ = e;
          found = true;
        }
      }
      if (++e == arc_num_) e = 0;
      if (--count == 0) {
        if (found) break;
        count = block_size_;
      }
    }
    next_arc_ = e;
    return found;
  }

  void find_join_node() {
    int u = source(in_arc_);
    int v = target(in_arc_);
    while (u != v) {
      if (succ_num_[u] < succ_num_[v]) {
        u = parent_[u];
      } else {
        v = parent_[v];
      }
    }
    join_ = u;
  }

  // Returns false when the cycle is unbounded (cannot happen with the
  // artificial arcs in place) so the caller only flips the arc state.
  bool find_leaving_arc() {
    const int first = source(in_arc_);
    const int second = target(in_arc_);
    constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();
    delta_ = kInf;
    int result = 0;
    for (int u = first; u != join_; u = parent_[u]) {
      const std::int64_t d = pred_dir_[u] == kUp ? flow_[pred_[u]] : kInf;
      if (d < delta_) {
        delta_ = d;
        u_out_ = u;
        result = 1;
      }
    }
    for (int u = second; u != join_; u = parent_[u]) {
      const std::int64_t d = pred_dir_[u] == kDown ? flow_[pred_[u]] : kInf;
      if (d <= delta_) {
        delta_ = d;
        u_out_ = u;
        result = 2;
      }
    }
    if (result == 1) {
      u_in_ = first;
      v_in_ = second;
    } else {
      u_in_ = second;
      v_in_ = first;
    }
    if (result == 0) throw ConfigError("transport: unbounded cycle");
    return true;
  }

  void change_flow(bool change) {
    if (delta_ > 0) {
      const std::int64_t val = delta_;
      flow_[in_arc_] += val;
      for (int u = source(in_arc_); u != join_; u = parent_[u]) flow_[pred_[u]] -= pred_dir_[u] * val;
      for (int u = target(in_arc_); u != join_; u = parent_[u]) flow_[pred_[u]] += pred_dir_[u] * val;
    }
    if (change) {
      state_[in_arc_] = kTree;
      const long out = pred_[u_out_];
      if (out < arc_num_) state_[out] = kLower;
    }
  }

  void update_tree_structure() {
    const int old_rev_thread = rev_thread_[u_out_];
    const int old_succ_num = succ_num_[u_out_];
    const int old_last_succ = last_succ_[u_out_];
    v_out_ = parent_[u_out_];

    if (u_in_ == u_out_) {
      parent_[u_in_] = v_in_;
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kUp : kDown;
      if (thread_[v_in_] != u_out_) {
        int after = thread_[old_last_succ];
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
        after = thread_[v_in_];
        thread_[v_in_] = u_out_;
        rev_thread_[u_out_] = v_in_;
        thread_[old_last_succ] = after;
        rev_thread_[after] = old_last_succ;
      }
    } else {
      // When old_rev_thread == v_in, join and v_out coincide.
      const int thread_continue = old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];

      // Re-hang the stem u_in .. u_out under v_in, fixing the thread.
      int stem = u_in_;
      int par_stem = v_in_;
      int last = last_succ_[u_in_];
      int after = thread_[last];
      thread_[v_in_] = u_in_;
      dirty_revs_.clear();
      dirty_revs_.push_back(v_in_);
      while (stem != u_out_) {
        const int next_stem = parent_[stem];
        thread_[last] = next_stem;
        dirty_revs_.push_back(last);

        const int before = rev_thread_[stem];
        thread_[before] = after;
        rev_thread_[after] = before;

        parent_[stem] = par_stem;
        par_stem = stem;
        stem = next_stem;

        last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem] : last_succ_[stem];
        after = thread_[last];
      }
      parent_[u_out_] = par_stem;
      thread_[last] = thread_continue;
      rev_thread_[thread_continue] = last;
      last_succ_[u_out_] = last;

      if (old_rev_thread != v_in_) {
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
      }
      for (int u : dirty_revs_) rev_thread_[thread_[u]] = u;

      int tmp_sc = 0;
      const int tmp_ls = last_succ_[u_out_];
      for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
        pred_[u] = pred_[p];
        pred_dir_[u] = -pred_dir_[p];
        tmp_sc += succ_num_[u] - succ_num_[p];
        succ_num_[u] = tmp_sc;
        last_succ_[p] = tmp_ls;
      }
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kUp : kDown;
      succ_num_[u_in_] = old_succ_num;
    }

    const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
    const int last_succ_out = last_succ_[u_out_];
    for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) last_succ_[u] = last_succ_out;

    if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
        last_succ_[u] = old_rev_thread;
    } else if (last_succ_out != old_last_succ) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
        last_succ_[u] = last_succ_out;
    }

    for (int u = v_in_; u != join_; u = parent_[u]) succ_num_[u] += old_succ_num;
    for (int u = v_out_; u != join_; u = parent_[u]) succ_num_[u] -= old_succ_num;
  }

  void update_potential() {
    const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * cost(in_arc_);
    const int end = thread_[last_succ_[u_in_]];
    for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
  }

  int n_;
  int m_;
  int node_num_;
  long arc_num_;
  int root_;
  const Matrix& cost_;
  double art_cost_ = 0.0;
  double tol_ = 0.0;

  std::vector<std::int64_t> flow_;
  std::vector<signed char> state_;
  std::vector<bool> art_forward_;

  std::vector<int> parent_;
  std::vector<long> pred_;
  std::vector<int> pred_dir_;
  std::vector<int> thread_;
  std::vector<int> rev_thread_;
  std::vector<int> succ_num_;
  std::vector<int> last_succ_;
  std::vector<double> pi_;
  std::vector<int> dirty_revs_;

  long block_size_ = 10;
  long next_arc_ = 0;
  long in_arc_ = 0;
  int join_ = 0;
  int u_in_ = 0;
  int v_in_ = 0;
  int u_out_ = 0;
  int v_out_ = 0;
  std::int64_t delta_ = 0;
};

}  // namespace

TransportPlan solve_transport(const Matrix& cost, std::span<const std::int64_t> supply,
                              std::span<const std::int64_t> demand) {
  const auto n = cost.rows();
  const auto m = cost.cols();
  if (n == 0 || m == 0) throw ConfigError("transport: empty cost matrix");
  if (static_cast<Eigen::Index>(supply.size()) != n || static_cast<Eigen::Index>(demand.size()) != m)
    throw ShapeError("transport: supply/demand sizes do not match the cost matrix");
  std::int64_t total_s = 0;
  std::int64_t total_d = 0;
  for (auto s : supply) {
    if (s < 0) throw ConfigError("transport: negative supply");
    total_s += s;
  }
  for (auto d : demand) {
    if (d < 0) throw ConfigError("transport: negative demand");
    total_d += d;
  }
  if (total_s != total_d) throw ConfigError("transport: supplies and demands are not balanced");
  if (total_s == 0) throw ConfigError("transport: zero total mass");
  if (!cost.allFinite()) throw ConfigError("transport: non-finite cost");

  NetworkSimplex ns(cost, supply, demand);
  TransportPlan plan;
  plan.pivots = ns.run();
  plan.total = total_s;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const std::int64_t f = ns.flow(static_cast<long>(i * m + j));
      if (f == 0) continue;
      plan.entries.push_back({i, j, f});
      acc += static_cast<double>(f) * cost(i, j);
    }
  }
  plan.cost = acc / static_cast<double>(total_s);
  return plan;
}

std::vector<std::int64_t> integer_masses(const Vector& weights, std::int64_t total) {
  if (weights.size() == 0) throw ConfigError("integer_masses: empty weights");
  if ((weights.array() < 0.0).any() || !weights.allFinite())
    throw ConfigError("integer_masses: weights must be finite and non-negative");
  const double sum = weights.sum();
  if (!(sum > 0.0)) throw ConfigError("integer_masses: zero total weight");
  std::vector<std::int64_t> out(static_cast<std::size_t>(weights.size()));
  std::vector<std::pair<double, std::size_t>> rem;
  std::int64_t assigned = 0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] / sum * static_cast<double>(total);
    const auto base = static_cast<std::int64_t>(std::floor(exact));
    out[static_cast<std::size_t>(k)] = base;
    assigned += base;
    rem.emplace_back(exact - static_cast<double>(base), static_cast<std::size_t>(k));
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[rem[k % rem.size()].second];
  return out;
}

}  // namespace cellmnn
