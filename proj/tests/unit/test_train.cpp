// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/error.hpp"
#include "cellmnn/train.hpp"

#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>

using namespace cellmnn;
namespace fs = std::filesystem;

namespace {

LatentMarginals linear_marginals(const std::vector<double>& times, Index n, std::uint64_t seed,
                                 std::optional<int> id = {}) {
  Matrix a(2, 2);
  a << 0.2, 0.5, 0.3, -0.4;
  Vector mean(2);
  mean << 0.8, 0.4;
  const auto synth = synth_linear_snapshots(a, gaussian_sampler(mean, 0.2 * Matrix::Identity(2, 2)),
                                            TimeGrid(times), n, Matrix::Identity(2, 2), 0.0, seed);
  PcaBasis identity;
  identity.v = Matrix::Identity(2, 2);
  LatentMarginals m = project_marginals(synth.data, identity);
  m.dataset_id = id;
  return m;
}

TrainConfig small_config() {
  TrainConfig c;
  c.encoder.depth = 2;
  c.encoder.width = 16;
  c.encoder.dz = 2;
  c.batch_per_time = 32;
  c.val_batch = 64;
  c.max_steps = 20;
  c.val_every = 5;
  c.patience = 100;
  c.seed = 42;
  return c;
}

std::vector<nlohmann::json> read_log(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cellmnn-test-train";
  fs::create_directories(dir);
  return dir / name;
}

bool same_params(const EncoderParams& a, const EncoderParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (!(a.layers[l].weight.array() == b.layers[l].weight.array()).all()) return false;
    if (!(a.layers[l].bias.array() == b.layers[l].bias.array()).all()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c = small_config();
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.optim.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.heldout_time = 5.0;
  CHECK_THROWS_AS(train_single(linear_marginals({0, 1, 2}, 50, 1), c), ConfigError);
  c = small_config();
  c.encoder.dz = 3;
  c.encoder.width = 16;
  CHECK_THROWS_AS(train_single(linear_marginals({0, 1, 2}, 50, 1), c), ConfigError);
}

TEST_CASE("config JSON round trip") {
  TrainConfig c = small_config();
  c.heldout_time = 1.0;
  c.loss.gamma = 0.3;
  c.encoder.zero_mask = {1};
  c.clip_norm = 2.0;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  CHECK(train_config_to_json(back) == train_config_to_json(c));
  CHECK(back.heldout_time.value() == 1.0);
  CHECK(back.encoder.zero_mask == std::vector<int>{1});
}

TEST_CASE("patience counts non-improving checks") {
  const LatentMarginals m = linear_marginals({0, 1, 2}, 100, 2);
  TrainConfig c = small_config();
  c.optim.lr = 0.0;
  c.optim.weight_decay = 0.0;
  c.val_every = 1;
  c.patience = 1;
  c.max_steps = 50;
  c.log_path = temp_path("patience.jsonl").string();
  const Checkpoint ck = train_single(m, c);
  CHECK(ck.stop_reason == "patience");
  CHECK(ck.steps_run == 2);
  int validations = 0;
  for (const auto& rec : read_log(c.log_path))
    if (rec.contains("val")) ++validations;
  CHECK(validations == 2);
  CHECK(ck.step == 1);
}

TEST_CASE("zero learning rate and zero weights leave parameters unchanged") {
  const LatentMarginals m = linear_marginals({0, 1, 2}, 100, 3);
  TrainConfig c = small_config();
  c.optim.lr = 0.0;
  c.loss.lambda_kin = 0.0;
  c.loss.lambda_inv = 0.0;
  c.loss.gamma = 0.0;
  c.max_steps = 15;
  c.val_every = 1;
  const Checkpoint ck = train_single(m, c);
  CHECK(same_params(ck.params, init_params(c.encoder, substream_seed(c.seed, "init"))));
}

TEST_CASE("fixed seed gives bitwise-identical checkpoints") {
  const LatentMarginals m = linear_marginals({0, 1, 2}, 100, 4);
  TrainConfig c = small_config();
  c.optim.lr = 1e-3;
  const Checkpoint a = train_single(m, c);
  const Checkpoint b = train_single(m, c);
  CHECK(checkpoint_to_json(a) == checkpoint_to_json(b));
  CHECK_FALSE(a.wall_seconds.has_value());
  c.seed = 43;
  const Checkpoint other = train_single(m, c);
  CHECK_FALSE(same_params(other.params, a.params));
}

TEST_CASE("best score is the minimum over validation events") {
  const LatentMarginals m = linear_marginals({0, 1, 2}, 100, 5);
  TrainConfig c = small_config();
  c.optim.lr = 3e-3;
  c.max_steps = 60;
  c.val_every = 3;
  c.log_path = temp_path("best.jsonl").string();
  const Checkpoint ck = train_single(m, c);
  double lowest = std::numeric_limits<double>::infinity();
  long at = -1;
  for (const auto& rec : read_log(c.log_path))
    if (rec.contains("val") && rec["val"].get<double>() < lowest) {
      lowest = rec["val"].get<double>();
      at = rec["step"].get<long>();
    }
  CHECK(ck.best_score == lowest);
  CHECK(ck.step == at);
}

TEST_CASE("checkpoint reload reproduces the validation score") {
  const LatentMarginals m = linear_marginals({0, 1, 2, 3}, 100, 6);
  TrainConfig c = small_config();
  c.heldout_time = 2.0;
  c.optim.lr = 1e-3;
  Checkpoint ck = train_single(m, c);
  ck.basis_ref = "basis.csv";
  const fs::path p = temp_path("ckpt.json");
  save_checkpoint(p, ck);
  const Checkpoint back = load_checkpoint(p);
  CHECK(back.basis_ref == "basis.csv");
  CHECK(back.best_score == ck.best_score);
  CHECK(same_params(back.params, ck.params));
  const ValidationSet set = make_validation_set(m, c.heldout_time, c.val_batch, substream_seed(c.seed, "validation"));
  for (const auto& pair : set.pairs) {
    CHECK(pair.t != 2.0);
    CHECK(pair.next != 2.0);
  }
  CHECK(validation_score(back.params, set, back.config.loss) == ck.best_score);
  CHECK(checkpoint_to_json(back) == checkpoint_to_json(ck));

  std::ofstream(p) << "{\"format\": \"something-else\"}";
  CHECK_THROWS(load_checkpoint(p));
}

TEST_CASE("leave-one-out protocol") {
  TrainConfig c = small_config();
  c.max_steps = 2;
  c.val_every = 1;
  SUBCASE("five equally spaced days") {
    const auto out = leave_one_out(linear_marginals({0, 1, 2, 3, 4}, 40, 7), c);
    REQUIRE(out.size() == 3);
    CHECK(out[0].first == 1.0);
    CHECK(out[2].first == 3.0);
    CHECK(out[1].second.config.heldout_time.value() == 2.0);
  }
  SUBCASE("a grid with a gap") {
    const auto out = leave_one_out(linear_marginals({0, 1, 2, 3, 7}, 40, 7), c);
    REQUIRE(out.size() == 3);
    CHECK(out[0].first == 1.0);
    CHECK(out[1].first == 2.0);
    CHECK(out[2].first == 3.0);
  }
  SUBCASE("no interior time") {
    CHECK_THROWS_AS(leave_one_out(linear_marginals({0, 1}, 40, 7), c), ConfigError);
  }
}

TEST_CASE("amortized round-robin schedule") {
  std::map<int, int> counts;
  for (long s = 0; s < 10; ++s) ++counts[amortized_schedule(s, 2)];
  CHECK(counts[0] == 5);
  CHECK(counts[1] == 5);

  const std::vector<LatentMarginals> data{linear_marginals({0, 1, 2}, 60, 8, 0),
                                          linear_marginals({0, 1, 2}, 60, 9, 1)};
  TrainConfig c = small_config();
  c.encoder.n_datasets = 2;
  c.max_steps = 10;
  c.log_path = temp_path("amortized.jsonl").string();
  const Checkpoint ck = train_amortized(data, c);
  std::map<int, int> logged;
  for (const auto& rec : read_log(c.log_path))
    if (rec.contains("dataset")) ++logged[rec["dataset"].get<int>()];
  CHECK(logged[0] == 5);
  CHECK(logged[1] == 5);
  CHECK(ck.dataset_scores.size() == 2);

  c.encoder.n_datasets = 3;
  CHECK_THROWS_AS(train_amortized(data, c), ConfigError);
  c.encoder.n_datasets = 2;
  std::vector<LatentMarginals> wrong = data;
  wrong[1].dataset_id = 0;
  CHECK_THROWS_AS(train_amortized(wrong, c), ConfigError);
}

TEST_CASE("twin datasets score alike") {
  const LatentMarginals base = linear_marginals({0, 1, 2}, 400, 10);
  LatentMarginals a = base, b = base;
  a.dataset_id = 0;
  b.dataset_id = 1;
  TrainConfig c = small_config();
  c.encoder.n_datasets = 2;
  c.optim.lr = 2e-3;
  c.max_steps = 200;
  c.val_every = 10;
  const Checkpoint ck = train_amortized({a, b}, c);
  // Sampling noise floor between two fresh validation-size batches.
  BatchSampler s(base, 99);
  double floor = 0.0;
  for (int rep = 0; rep < 10; ++rep)
    floor += mmd2_laplacian(s.sample(1.0, c.val_batch), s.sample(1.0, c.val_batch), c.loss);
  floor /= 10.0;
  INFO("scores " << ck.dataset_scores[0] << " " << ck.dataset_scores[1] << " floor " << floor);
  CHECK(std::abs(ck.dataset_scores[0] - ck.dataset_scores[1]) < 2.0 * floor);
}

TEST_CASE("single-dataset amortization matches plain training in kind") {
  const LatentMarginals m = linear_marginals({0, 1, 2}, 200, 11, 0);
  TrainConfig c = small_config();
  c.optim.lr = 2e-3;
  c.max_steps = 100;
  const Checkpoint plain = train_single(m, c);
  c.encoder.n_datasets = 1;
  const Checkpoint amortized = train_amortized({m}, c);
  CHECK(amortized.params.layers.front().weight.rows() == plain.params.layers.front().weight.rows() + 1);
  CHECK(amortized.best_score < 2.0 * plain.best_score);
  CHECK(plain.best_score < 2.0 * amortized.best_score);
}

TEST_CASE("training reduces the loss on a linear fixture") {
  const LatentMarginals m = linear_marginals({0, 1, 2}, 1000, 12);
  TrainConfig c = small_config();
  c.optim.lr = 1e-3;
  c.max_steps = 2000;
  c.val_every = 50;
  c.patience = 1000;
  c.batch_per_time = 64;
  c.log_path = temp_path("regression.jsonl").string();
  train_single(m, c);
  const auto log = read_log(c.log_path);
  double first = 0.0, last = 0.0;
  const int window = 50;
  for (int k = 0; k < window; ++k) {
    first += log[static_cast<std::size_t>(k)]["total"].get<double>();
    last += log[log.size() - 2 - static_cast<std::size_t>(k)]["total"].get<double>();
  }
  INFO("initial " << first / window << " final " << last / window);
  CHECK(last < 0.5 * first);
}
