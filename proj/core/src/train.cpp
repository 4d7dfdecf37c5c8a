// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/train.hpp"

#include "cellmnn/error.hpp"
#include "cellmnn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cellmnn {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(optim.lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
  if (optim.weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
  if (batch_per_time < 1 || val_batch < 1) throw ConfigError("train: batch sizes must be positive");
  if (max_steps < 0) throw ConfigError("train: max_steps must be non-negative");
  if (val_every < 1) throw ConfigError("train: val_every must be at least 1");
  if (patience < 1) throw ConfigError("train: patience must be at least 1");
  if (!(max_minutes > 0.0)) throw ConfigError("train: max_minutes must be positive");
  if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be non-negative");
  loss.validate();
  encoder.validate();
}

// -- Serialization -------------------------------------------------------------

namespace {

json config_json(const TrainConfig& c) {
  const auto& e = c.encoder;
  json j = {
      {"lr", c.optim.lr},
      {"beta1", c.optim.beta1},
      {"beta2", c.optim.beta2},
      {"adam_eps", c.optim.eps},
      {"weight_decay", c.optim.weight_decay},
      {"batch_per_time", c.batch_per_time},
      {"max_steps", c.max_steps},
      {"val_every", c.val_every},
      {"patience", c.patience},
      {"max_minutes", c.max_minutes},
      {"seed", c.seed},
      {"clip_norm", c.clip_norm},
      {"deterministic", c.deterministic},
      {"val_batch", c.val_batch},
      {"log_path", c.log_path},
      {"loss",
       {{"sigma", c.loss.sigma},
        {"eps_kernel", c.loss.eps_kernel},
        {"gamma", c.loss.gamma},
        {"lambda_kin", c.loss.lambda_kin},
        {"lambda_inv", c.loss.lambda_inv},
        {"eps_inv", c.loss.eps_inv},
        {"include_self_term", c.loss.include_self_term},
        {"discount_by_lag", c.loss.discount_by_lag},
        {"unbiased_mmd", c.loss.unbiased_mmd},
        {"signed_inverse_penalty", c.loss.signed_inverse_penalty}}},
      {"encoder",
       {{"depth", e.depth},
        {"width", e.width},
        {"dz", e.dz},
        {"n_datasets", e.n_datasets},
        {"zero_mask", e.zero_mask},
        {"leaky_slope", e.leaky_slope},
        {"out_scale", e.out_scale},
        {"time_scale", e.time_scale}}},
  };
  j["heldout_time"] = c.heldout_time ? json(*c.heldout_time) : json(nullptr);
  return j;
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  read_opt(j, "lr", c.optim.lr);
  read_opt(j, "beta1", c.optim.beta1);
  read_opt(j, "beta2", c.optim.beta2);
  read_opt(j, "adam_eps", c.optim.eps);
  read_opt(j, "weight_decay", c.optim.weight_decay);
  read_opt(j, "batch_per_time", c.batch_per_time);
  read_opt(j, "max_steps", c.max_steps);
  read_opt(j, "val_every", c.val_every);
  read_opt(j, "patience", c.patience);
  read_opt(j, "max_minutes", c.max_minutes);
  read_opt(j, "seed", c.seed);
  read_opt(j, "clip_norm", c.clip_norm);
  read_opt(j, "deterministic", c.deterministic);
  read_opt(j, "val_batch", c.val_batch);
  read_opt(j, "log_path", c.log_path);
  if (j.contains("heldout_time") && !j.at("heldout_time").is_null())
    c.heldout_time = j.at("heldout_time").get<double>();
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    read_opt(l, "sigma", c.loss.sigma);
    read_opt(l, "eps_kernel", c.loss.eps_kernel);
    read_opt(l, "gamma", c.loss.gamma);
    read_opt(l, "lambda_kin", c.loss.lambda_kin);
    read_opt(l, "lambda_inv", c.loss.lambda_inv);
    read_opt(l, "eps_inv", c.loss.eps_inv);
    read_opt(l, "include_self_term", c.loss.include_self_term);
    read_opt(l, "discount_by_lag", c.loss.discount_by_lag);
    read_opt(l, "unbiased_mmd", c.loss.unbiased_mmd);
    read_opt(l, "signed_inverse_penalty", c.loss.signed_inverse_penalty);
  }
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    read_opt(e, "depth", c.encoder.depth);
    read_opt(e, "width", c.encoder.width);
    read_opt(e, "dz", c.encoder.dz);
    read_opt(e, "n_datasets", c.encoder.n_datasets);
    read_opt(e, "zero_mask", c.encoder.zero_mask);
    read_opt(e, "leaky_slope", c.encoder.leaky_slope);
    read_opt(e, "out_scale", c.encoder.out_scale);
    read_opt(e, "time_scale", c.encoder.time_scale);
  }
  return c;
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what(), 0);
  }
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    return config_from(parse_json(text, "train config"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what(), 0);
  }
}

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  json j;
  j["format"] = "cellmnn-checkpoint";
  j["version"] = 1;
  j["config"] = config_json(ckpt.config);
  j["config_hash"] = fnv1a64(config_json(ckpt.config).dump());
  j["basis_ref"] = ckpt.basis_ref;
  j["step"] = ckpt.step;
  j["steps_run"] = ckpt.steps_run;
  j["best_score"] = ckpt.best_score;
  j["dataset_scores"] = ckpt.dataset_scores;
  j["stop_reason"] = ckpt.stop_reason;
  if (ckpt.wall_seconds) j["wall_seconds"] = *ckpt.wall_seconds;
  j["encoder"] = json::parse(encoder_to_json(ckpt.params));
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  const json j = parse_json(text, "checkpoint");
  if (j.value("format", "") != "cellmnn-checkpoint") throw ParseError("checkpoint: wrong format tag", 0);
  if (j.value("version", 0) != 1) throw ParseError("checkpoint: unsupported version", 0);
  try {
    Checkpoint c;
    c.config = config_from(j.at("config"));
    c.basis_ref = j.value("basis_ref", "");
    c.step = j.at("step").get<long>();
    c.steps_run = j.at("steps_run").get<long>();
    c.best_score = j.at("best_score").get<double>();
    c.dataset_scores = j.value("dataset_scores", std::vector<double>{});
    c.stop_reason = j.value("stop_reason", "");
    if (j.contains("wall_seconds")) c.wall_seconds = j.at("wall_seconds").get<double>();
    c.params = encoder_from_json(j.at("encoder").dump());
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ckpt) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

// -- Validation ------------------------------------------------------------------

namespace {

bool same_time(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

std::vector<double> kept_times(const TimeGrid& grid, std::optional<double> heldout) {
  std::vector<double> out;
  for (double t : grid.values())
    if (!heldout || !same_time(t, *heldout)) out.push_back(t);
  return out;
}

}  // namespace

ValidationSet make_validation_set(const LatentMarginals& marginals, std::optional<double> heldout,
                                  Index batch, std::uint64_t seed) {
  const auto times = kept_times(marginals.grid, heldout);
  if (times.size() < 2) throw ConfigError("validation: need at least two non-held-out times");
  BatchSampler sampler(marginals, seed);
  ValidationSet set;
  set.dataset = marginals.dataset_id;
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    ValidationSet::Pair p;
    p.t = times[k];
    p.next = times[k + 1];
    p.z = sampler.sample(p.t, batch);
    p.y = sampler.sample(p.next, batch);
    set.pairs.push_back(std::move(p));
  }
  return set;
}

double validation_score(const EncoderParams& params, const ValidationSet& set, const LossConfig& cfg) {
  double total = 0.0;
  for (const auto& p : set.pairs) {
    const Matrix pushed = push_latent_rows(params, p.z, p.t, p.next - p.t, set.dataset);
    total += mmd2_laplacian(pushed, p.y, cfg);
  }
  return total / static_cast<double>(set.pairs.size());
}

// -- Training loop ---------------------------------------------------------------

namespace {

struct Source {
  const LatentMarginals* marginals;
  BatchSampler sampler;
  ValidationSet validation;
};

std::string divergence_report(long step, const LossTerms& terms) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  double mean = 0.0;
  for (double d : terms.basis_dets) {
    lo = std::min(lo, std::abs(d));
    hi = std::max(hi, std::abs(d));
    mean += std::abs(d);
  }
  if (!terms.basis_dets.empty()) mean /= static_cast<double>(terms.basis_dets.size());
  std::ostringstream os;
  os << "training diverged at step " << step << ": mmd=" << terms.mmd.scalar()
     << " kinetic=" << terms.kinetic.scalar() << " inverse=" << terms.inverse.scalar()
     << " |det P| min=" << lo << " mean=" << mean << " max=" << hi;
  return os.str();
}

Checkpoint run(std::vector<Source>& sources, const TrainConfig& config) {
  config.validate();
  const auto wall_start = std::chrono::steady_clock::now();
  auto elapsed_seconds = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  };

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path);
    if (!log) throw ConfigError("cannot write run log " + config.log_path);
  }

  EncoderParams params = init_params(config.encoder, substream_seed(config.seed, "init"));
  AdamWState state = adamw_init(std::as_const(params).tensors());

  Checkpoint best;
  best.config = config;
  best.params = params;
  best.best_score = std::numeric_limits<double>::infinity();
  best.dataset_scores.assign(sources.size(), std::numeric_limits<double>::infinity());
  int checks_without_improvement = 0;
  bool validated = false;
  std::string stop_reason = "max_steps";
  long step = 0;

  auto validate_now = [&](long at) {
    double total = 0.0;
    std::vector<double> per;
    for (const auto& s : sources) {
      per.push_back(validation_score(params, s.validation, config.loss));
      total += per.back();
    }
    const double score = total / static_cast<double>(sources.size());
    validated = true;
    if (score < best.best_score) {
      best.best_score = score;
      best.dataset_scores = per;
      best.params = params;
      best.step = at;
      checks_without_improvement = 0;
    } else {
      ++checks_without_improvement;
    }
    return score;
  };

  const double budget_seconds = config.max_minutes * 60.0;
  while (step < config.max_steps) {
    if (elapsed_seconds() >= budget_seconds) {
      stop_reason = "max_minutes";
      break;
    }
    ++step;
    Source& src = sources[static_cast<std::size_t>(amortized_schedule(step - 1, static_cast<int>(sources.size())))];

    diff::Tape tape;
    BoundEncoder bound(tape, params);
    const BatchPlan plan = plan_batches(*src.marginals, config.heldout_time, config.batch_per_time,
                                        config.loss, src.sampler);
    const LossTerms terms = total_loss(bound, plan, config.loss);
    if (!std::isfinite(terms.total.scalar())) throw DivergenceError(divergence_report(step, terms));
    tape.backward(terms.total);

    std::vector<Matrix> grads;
    grads.reserve(bound.vars().size());
    for (const auto& v : bound.vars()) grads.push_back(v.grad());
    double grad_norm = 0.0;
    if (config.clip_norm > 0.0) {
      grad_norm = clip_global_norm(grads, config.clip_norm);
    } else {
      for (const auto& g : grads) grad_norm += g.squaredNorm();
      grad_norm = std::sqrt(grad_norm);
    }
    adamw_step(params.tensors(), grads, state, config.optim);

    std::optional<double> score;
    if (step % config.val_every == 0) score = validate_now(step);

    if (log) {
      json rec = {{"step", step},
                  {"mmd", terms.mmd.scalar()},
                  {"kinetic", terms.kinetic.scalar()},
                  {"inverse", terms.inverse.scalar()},
                  {"total", terms.total.scalar()},
                  {"grad_norm", grad_norm},
                  {"wall_seconds", elapsed_seconds()}};
      if (sources.size() > 1) rec["dataset"] = src.marginals->dataset_id.value_or(-1);
      if (score) rec["val"] = *score;
      log << rec.dump() << '\n';
    }
    if (score && checks_without_improvement >= config.patience) {
      stop_reason = "patience";
      break;
    }
  }
  if (!validated) validate_now(step);

  best.steps_run = step;
  best.stop_reason = stop_reason;
  if (!config.deterministic) best.wall_seconds = elapsed_seconds();
  if (log) log << json{{"event", "done"}, {"stop_reason", stop_reason}, {"steps", step},
                       {"best_step", best.step}, {"best_score", best.best_score},
                       {"wall_seconds", elapsed_seconds()}}.dump() << '\n';
  return best;
}

void check_dims(const LatentMarginals& m, const TrainConfig& config) {
  if (m.dz() != config.encoder.dz)
    throw ConfigError("train: marginals have d_z = " + std::to_string(m.dz()) + " but the encoder expects " +
                      std::to_string(config.encoder.dz));
  if (config.heldout_time && !m.grid.index_of(*config.heldout_time))
    throw ConfigError("train: held-out time is not on the grid");
}

}  // namespace

Checkpoint train_single(const LatentMarginals& input, const TrainConfig& config) {
  check_dims(input, config);
  // An unconditioned encoder ignores whatever index the file carried.
  std::optional<LatentMarginals> stripped;
  if (config.encoder.n_datasets == 0 && input.dataset_id) {
    stripped = input;
    stripped->dataset_id.reset();
  }
  const LatentMarginals& marginals = stripped ? *stripped : input;
  std::vector<Source> sources;
  sources.push_back({&marginals, BatchSampler(marginals, substream_seed(config.seed, "batch")),
                     make_validation_set(marginals, config.heldout_time, config.val_batch,
                                         substream_seed(config.seed, "validation"))});
  return run(sources, config);
}

std::vector<std::pair<double, Checkpoint>> leave_one_out(const LatentMarginals& marginals,
                                                         const TrainConfig& config) {
  const auto& times = marginals.grid.values();
  if (times.size() < 3) throw ConfigError("leave_one_out: grid has no interior time");
  std::vector<std::pair<double, Checkpoint>> out;
  for (std::size_t k = 1; k + 1 < times.size(); ++k) {
    TrainConfig c = config;
    c.heldout_time = times[k];
    if (!c.log_path.empty()) c.log_path += ".heldout" + std::to_string(k);
    out.emplace_back(times[k], train_single(marginals, c));
  }
  return out;
}

Checkpoint train_amortized(const std::vector<LatentMarginals>& datasets, const TrainConfig& config) {
  if (datasets.empty()) throw ConfigError("train_amortized: no datasets");
  if (config.encoder.n_datasets != static_cast<int>(datasets.size()))
    throw ConfigError("train_amortized: encoder n_datasets must equal the dataset count");
  std::vector<Source> sources;
  for (std::size_t k = 0; k < datasets.size(); ++k) {
    const auto& m = datasets[k];
    check_dims(m, config);
    if (m.dataset_id != static_cast<int>(k))
      throw ConfigError("train_amortized: dataset " + std::to_string(k) + " carries the wrong index");
    const std::string tag = std::to_string(k);
    sources.push_back({&m, BatchSampler(m, substream_seed(config.seed, "batch/" + tag)),
                       make_validation_set(m, config.heldout_time, config.val_batch,
                                           substream_seed(config.seed, "validation/" + tag))});
  }
  return run(sources, config);
}

}  // namespace cellmnn
