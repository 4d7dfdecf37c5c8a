// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact transportation problem solver (primal network simplex with block
// search pivoting) on integer supplies.

#pragma once

#include "cellmnn/linop.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace cellmnn {

struct TransportEntry {
  Eigen::Index i = 0;
  Eigen::Index j = 0;
  std::int64_t flow = 0;
};

struct TransportPlan {
  std::vector<TransportEntry> entries;  // positive flows, ordered by (i, j)
  std::int64_t total = 0;               // sum of supplies
  double cost = 0.0;                    // sum(flow * c) / total
  long pivots = 0;
};

/// Minimises sum flow_ij c_ij subject to row sums = supply and column sums
/// = demand. Supplies and demands must be non-negative with equal totals.
TransportPlan solve_transport(const Matrix& cost, std::span<const std::int64_t> supply,
                              std::span<const std::int64_t> demand);

/// Integer masses summing to `total` whose ratios follow `weights`
/// (largest-remainder rounding). Weights must be non-negative with a
/// positive sum.
std::vector<std::int64_t> integer_masses(const Vector& weights, std::int64_t total);

}  // namespace cellmnn
