// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace cellmnn {

/// Worker count: CELLMNN_THREADS when set to a positive integer, else the
/// hardware concurrency (at least 1).
int default_threads();

/// Calls fn(k) for every k in [0, tasks) on up to `threads` workers. Tasks
/// are claimed in index order; callers write results into per-task slots
/// and reduce them in index order, so the outcome does not depend on the
/// thread count. The first exception thrown by a task is rethrown.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn, int threads);

}  // namespace cellmnn
