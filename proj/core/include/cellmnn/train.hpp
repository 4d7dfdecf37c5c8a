// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop, leave-one-timepoint-out protocol and amortized training
// over several datasets.

#pragma once

#include "cellmnn/encoder.hpp"
#include "cellmnn/losses.hpp"
#include "cellmnn/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cellmnn {

struct TrainConfig {
  AdamWConfig optim;
  Index batch_per_time = 200;
  long max_steps = 100000;
  int val_every = 10;
  int patience = 40;
  double max_minutes = 200.0;
  std::uint64_t seed = 0;
  LossConfig loss;
  EncoderConfig encoder;
  std::optional<double> heldout_time;
  /// Global-norm gradient clip; 0 disables.
  double clip_norm = 0.0;
  /// Keeps wall-clock out of checkpoints so repeated runs compare bitwise.
  bool deterministic = true;
  Index val_batch = 200;
  /// JSON-lines run log; empty disables.
  std::string log_path;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct Checkpoint {
  EncoderParams params;
  TrainConfig config;
  std::string basis_ref;
  long step = 0;          // step at which the best score was reached
  long steps_run = 0;
  double best_score = 0.0;
  std::vector<double> dataset_scores;  // amortized runs: best score per dataset
  std::string stop_reason;
  std::optional<double> wall_seconds;  // absent in deterministic mode
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Fixed validation batches: for each non-held-out source time, a batch of
/// it and of its next non-held-out time.
struct ValidationSet {
  struct Pair {
    double t = 0.0;
    double next = 0.0;
    Matrix z;
    Matrix y;
  };
  std::vector<Pair> pairs;
  std::optional<int> dataset;
};

ValidationSet make_validation_set(const LatentMarginals& marginals, std::optional<double> heldout,
                                  Index batch, std::uint64_t seed);
/// Mean MMD^2 between the pushed source batches and their successors.
double validation_score(const EncoderParams& params, const ValidationSet& set, const LossConfig& cfg);

Checkpoint train_single(const LatentMarginals& marginals, const TrainConfig& config);

/// One checkpoint per interior grid time, keyed by the held-out time.
std::vector<std::pair<double, Checkpoint>> leave_one_out(const LatentMarginals& marginals,
                                                         const TrainConfig& config);

/// Round-robin over datasets (step k draws from dataset k mod n); each
/// dataset's marginals must carry its index and share d_z.
Checkpoint train_amortized(const std::vector<LatentMarginals>& datasets, const TrainConfig& config);

/// Source dataset for each step of an amortized run.
inline int amortized_schedule(long step, int n_datasets) {
  return static_cast<int>(step % n_datasets);
}

}  // namespace cellmnn
