// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "cellmnn/data.hpp"
#include "cellmnn/error.hpp"
#include "cellmnn/eval.hpp"
#include "cellmnn/interactions.hpp"
#include "cellmnn/parallel.hpp"
#include "cellmnn/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

namespace cellmnn::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

std::string time_label(double t) {
  std::ostringstream ss;
  ss << t;
  return ss.str();
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out.replace_filename(p.stem().string() + suffix + p.extension().string());
  return out;
}

/// Inputs, outputs and resolved options of one command.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_[p.string()] = hex64(fnv1a64(read_file(p))); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const fs::path& path, const CLI::App& sub) const {
    json config = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name == "manifest") continue;
      const auto& results = opt->results();
      if (results.empty()) {
        config[name] = opt->get_default_str();
      } else if (results.size() == 1) {
        config[name] = results.front();
      } else {
        config[name] = results;
      }
    }
    json j = {{"command", command_},
              {"config", config},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"wall_seconds",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
    if (seed_) j["seed"] = *seed_;
    write_file(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  std::optional<std::uint64_t> seed_;
};

void write_points(const fs::path& p, const Matrix& z) {
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Index c = 0; c < z.cols(); ++c) out << (c ? "," : "") << 'z' << c;
  out << '\n';
  for (Index r = 0; r < z.rows(); ++r) {
    for (Index c = 0; c < z.cols(); ++c) out << (c ? "," : "") << z(r, c);
    out << '\n';
  }
}

Matrix random_orthonormal(Rng& rng, Index rows, Index cols) {
  Matrix g(rows, cols);
  for (Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
  return Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(rows, cols);
}

// -- Shared option groups --------------------------------------------------------

struct TrainFlags {
  double lr = 2e-4;
  double weight_decay = 1e-5;
  Index batch = 200;
  long max_steps = 100000;
  int val_every = 10;
  int patience = 40;
  double max_minutes = 200.0;
  std::uint64_t seed = 0;
  double gamma = 0.1;
  double sigma = 1.0;
  double lambda_kin = 0.1;
  double lambda_inv = 1.0;
  bool discount_by_lag = false;
  bool unbiased = false;
  bool skip_self = false;
  int depth = 4;
  int width = 96;
  std::vector<int> zero_mask;
  double time_scale = 1.0;
  double clip_norm = 0.0;
  Index val_batch = 200;
  std::string log;

  void add(CLI::App* app) {
    app->add_option("--lr", lr, "AdamW learning rate");
    app->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    app->add_option("--batch", batch, "Batch size per time point");
    app->add_option("--max-steps", max_steps, "Step limit");
    app->add_option("--val-every", val_every, "Steps between validation checks");
    app->add_option("--patience", patience, "Non-improving checks before stopping");
    app->add_option("--max-minutes", max_minutes, "Wall-clock budget");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--gamma", gamma, "Future discount factor");
    app->add_option("--sigma", sigma, "Laplacian kernel bandwidth");
    app->add_option("--lambda-kin", lambda_kin, "Kinetic regularizer weight");
    app->add_option("--lambda-inv", lambda_inv, "Invertibility regularizer weight");
    app->add_flag("--discount-by-lag", discount_by_lag, "Discount by t' - t instead of t'");
    app->add_flag("--unbiased-mmd", unbiased, "Use the U-statistic MMD estimator");
    app->add_flag("--skip-self-term", skip_self, "Drop the t' = t loss term");
    app->add_option("--depth", depth, "Hidden layers of the encoder");
    app->add_option("--width", width, "Hidden width of the encoder");
    app->add_option("--zero-mask", zero_mask, "Eigenvalue indices pinned to zero")->delimiter(',');
    app->add_option("--time-scale", time_scale, "Divisor applied to t before the encoder");
    app->add_option("--clip-norm", clip_norm, "Global gradient-norm clip (0 disables)");
    app->add_option("--val-batch", val_batch, "Validation batch size per time point");
    app->add_option("--log", log, "JSON-lines run log");
  }

  TrainConfig config(int dz, int n_datasets, bool deterministic) const {
    TrainConfig c;
    c.optim.lr = lr;
    c.optim.weight_decay = weight_decay;
    c.batch_per_time = batch;
    c.max_steps = max_steps;
    c.val_every = val_every;
    c.patience = patience;
    c.max_minutes = max_minutes;
    c.seed = seed;
    c.loss.gamma = gamma;
    c.loss.sigma = sigma;
    c.loss.lambda_kin = lambda_kin;
    c.loss.lambda_inv = lambda_inv;
    c.loss.discount_by_lag = discount_by_lag;
    c.loss.unbiased_mmd = unbiased;
    c.loss.include_self_term = !skip_self;
    c.encoder.depth = depth;
    c.encoder.width = width;
    c.encoder.dz = dz;
    c.encoder.n_datasets = n_datasets;
    c.encoder.zero_mask = zero_mask;
    c.encoder.time_scale = time_scale;
    c.clip_norm = clip_norm;
    c.val_batch = val_batch;
    c.log_path = log;
    c.deterministic = deterministic;
    return c;
  }
};

struct Inputs {
  std::string data;
  std::string basis;
};

/// Basis given on the command line, else the one recorded in the checkpoint
/// (relative to the checkpoint's directory).
fs::path resolve_basis(const std::string& flag, const Checkpoint& ck, const fs::path& ckpt_path) {
  if (!flag.empty()) return flag;
  if (ck.basis_ref.empty()) throw ConfigError("no --basis given and the checkpoint does not name one");
  fs::path ref = ck.basis_ref;
  if (ref.is_relative()) ref = ckpt_path.parent_path() / ref;
  return ref;
}

std::string relative_ref(const fs::path& target, const fs::path& from_file) {
  const fs::path dir = fs::absolute(from_file).parent_path();
  return fs::relative(fs::absolute(target), dir).string();
}

// -- Commands --------------------------------------------------------------------------

struct Runner {
  std::ostream& out;
  bool deterministic = false;
  std::string manifest_path;

  fs::path manifest_for(const fs::path& primary) const {
    return manifest_path.empty() ? fs::path(primary.string() + ".manifest.json") : fs::path(manifest_path);
  }
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cellmnn: locally linear latent dynamics from snapshot data", "cellmnn"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key-value config file (INI/TOML); flags override it");
  app.option_defaults()->always_capture_default();

  Runner run{out, false, {}};
  app.add_flag("--deterministic", run.deterministic, "Keep wall-clock out of checkpoints for bitwise re-runs");
  app.add_option("--manifest", run.manifest_path, "Run manifest path (default: <output>.manifest.json)");

  std::function<void()> action;

  // pca ------------------------------------------------------------------------
  auto* pca = app.add_subcommand("pca", "Fit and save a PCA basis");
  struct {
    std::string data, out;
    int dz = 5;
    bool centered = false;
  } pca_o;
  pca->add_option("--data", pca_o.data, "Snapshot table")->required();
  pca->add_option("--dz", pca_o.dz, "Latent dimension");
  pca->add_flag("--centered", pca_o.centered, "Subtract the column mean before the SVD");
  pca->add_option("--out", pca_o.out, "Basis file")->required();
  pca->callback([&] {
    action = [&] {
      Manifest m("pca");
      m.input(pca_o.data);
      const SnapshotDataset data = load_dataset(pca_o.data);
      save_basis(pca_o.out, fit_pca(data.x(), pca_o.dz, pca_o.centered));
      m.output(pca_o.out);
      m.write(run.manifest_for(pca_o.out), *pca);
      out << "basis " << pca_o.out << " (d_x=" << data.dim() << ", d_z=" << pca_o.dz << ")\n";
    };
  });

  // synth ----------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic snapshot dataset");
  struct {
    std::string kind = "linear", out, latent_out;
    std::uint64_t seed = 7;
    Index n_per_time = 2000;
    std::vector<double> grid{0, 1, 2};
    int dx = 8;
    double noise = 0.01;
    std::vector<double> a_star{0.2, 0.5, 0.3, -0.4};
    double spread = 0.3;
  } syn_o;
  synth->add_option("--kind", syn_o.kind, "linear or spiral")->check(CLI::IsMember({"linear", "spiral"}));
  synth->add_option("--seed", syn_o.seed, "Generator seed");
  synth->add_option("--n-per-time", syn_o.n_per_time, "Samples per grid time");
  synth->add_option("--grid", syn_o.grid, "Observation times")->delimiter(',');
  synth->add_option("--dx", syn_o.dx, "Observed dimension for linear data");
  synth->add_option("--noise", syn_o.noise, "Observation noise sd for linear data");
  synth->add_option("--a-star", syn_o.a_star, "Generating operator, row major")->delimiter(',');
  synth->add_option("--spread", syn_o.spread, "Initial-state mixture sd");
  synth->add_option("--out", syn_o.out, "Snapshot table")->required();
  synth->add_option("--latent-out", syn_o.latent_out, "Also write the noise-free latent states");
  synth->callback([&] {
    action = [&] {
      Manifest m("synth");
      m.seed(syn_o.seed);
      const TimeGrid grid(syn_o.grid);
      SyntheticSnapshots s;
      if (syn_o.kind == "linear") {
        const auto dz = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(syn_o.a_star.size()))));
        if (dz * dz != static_cast<Index>(syn_o.a_star.size()))
          throw ConfigError("--a-star must hold d_z^2 values");
        if (syn_o.dx < dz) throw ConfigError("--dx must be at least d_z");
        Matrix a(dz, dz);
        for (Index r = 0; r < dz; ++r)
          for (Index c = 0; c < dz; ++c) a(r, c) = syn_o.a_star[static_cast<std::size_t>(r * dz + c)];
        Rng rng(substream_seed(syn_o.seed, "embedding"));
        const Matrix emb = syn_o.dx == dz ? Matrix(Matrix::Identity(dz, dz)) : random_orthonormal(rng, syn_o.dx, dz);
        std::vector<Vector> centers;
        if (dz == 2) {
          for (const auto& c : {std::pair{1.0, 0.5}, std::pair{-0.5, 1.0}, std::pair{0.2, -1.0}}) {
            Vector v(2);
            v << c.first, c.second;
            centers.push_back(v);
          }
        } else {
          for (int k = 0; k < 3; ++k) {
            Vector v(dz);
            for (Index i = 0; i < dz; ++i) v[i] = rng.normal();
            centers.push_back(v);
          }
        }
        s = synth_linear_snapshots(a, mixture_sampler(centers, syn_o.spread), grid, syn_o.n_per_time, emb,
                                   syn_o.noise, syn_o.seed);
      } else {
        s = synth_spiral_snapshots(grid, syn_o.n_per_time, syn_o.seed);
      }
      save_dataset(syn_o.out, s.data);
      m.output(syn_o.out);
      if (!syn_o.latent_out.empty()) {
        write_points(syn_o.latent_out, s.latent);
        m.output(syn_o.latent_out);
      }
      m.write(run.manifest_for(syn_o.out), *synth);
      out << "wrote " << s.data.size() << " rows to " << syn_o.out << '\n';
    };
  });

  // inflate --------------------------------------------------------------------
  auto* inflate = app.add_subcommand("inflate", "Resample a dataset to more rows with latent noise");
  struct {
    Inputs in;
    std::string out;
    Index target_n = 250000;
    double noise_sd = 0.1;
    std::uint64_t seed = 0;
  } inf_o;
  inflate->add_option("--data", inf_o.in.data, "Snapshot table")->required();
  inflate->add_option("--basis", inf_o.in.basis, "PCA basis")->required();
  inflate->add_option("--target-n", inf_o.target_n, "Rows after inflation");
  inflate->add_option("--noise-sd", inf_o.noise_sd, "Latent noise sd");
  inflate->add_option("--seed", inf_o.seed, "Resampling seed");
  inflate->add_option("--out", inf_o.out, "Snapshot table")->required();
  inflate->callback([&] {
    action = [&] {
      Manifest m("inflate");
      m.seed(inf_o.seed);
      m.input(inf_o.in.data);
      m.input(inf_o.in.basis);
      const SnapshotDataset big = inflate_dataset(load_dataset(inf_o.in.data), load_basis(inf_o.in.basis),
                                                  inf_o.target_n, inf_o.noise_sd, inf_o.seed);
      save_dataset(inf_o.out, big);
      m.output(inf_o.out);
      m.write(run.manifest_for(inf_o.out), *inflate);
      out << "wrote " << big.size() << " rows to " << inf_o.out << '\n';
    };
  });

  // train ----------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train on one dataset (optionally leave-one-timepoint-out)");
  struct {
    Inputs in;
    std::string out;
    std::optional<double> heldout;
    bool loo = false;
    TrainFlags flags;
  } tr_o;
  train->add_option("--data", tr_o.in.data, "Snapshot table")->required();
  train->add_option("--basis", tr_o.in.basis, "PCA basis")->required();
  train->add_option("--out", tr_o.out, "Checkpoint file")->required();
  train->add_option("--heldout", tr_o.heldout, "Grid time excluded from training");
  train->add_flag("--leave-one-out", tr_o.loo, "One model per interior time (<out>.heldout<t>.json)");
  tr_o.flags.add(train);
  train->callback([&] {
    action = [&] {
      if (tr_o.loo && tr_o.heldout) throw CLI::ValidationError("--heldout and --leave-one-out are exclusive");
      Manifest m("train");
      m.seed(tr_o.flags.seed);
      m.input(tr_o.in.data);
      m.input(tr_o.in.basis);
      const SnapshotDataset data = load_dataset(tr_o.in.data);
      const PcaBasis basis = load_basis(tr_o.in.basis);
      const LatentMarginals marginals = project_marginals(data, basis);
      TrainConfig cfg = tr_o.flags.config(static_cast<int>(basis.dz()), 0, run.deterministic);
      auto save = [&](Checkpoint ck, const fs::path& p) {
        ck.basis_ref = relative_ref(tr_o.in.basis, p);
        save_checkpoint(p, ck);
        m.output(p);
        out << p.string() << ": best " << ck.best_score << " at step " << ck.step << " (" << ck.stop_reason
            << ", " << ck.steps_run << " steps)\n";
      };
      if (tr_o.loo) {
        for (auto& [t, ck] : leave_one_out(marginals, cfg)) save(ck, with_suffix(tr_o.out, ".heldout" + time_label(t)));
      } else {
        cfg.heldout_time = tr_o.heldout;
        save(train_single(marginals, cfg), tr_o.out);
      }
      m.write(run.manifest_for(tr_o.out), *train);
    };
  });

  // train-amortized ------------------------------------------------------------
  auto* amort = app.add_subcommand("train-amortized", "Train one conditioned model over several datasets");
  struct {
    std::vector<std::string> data, basis;
    std::string out;
    std::optional<double> heldout;
    TrainFlags flags;
  } am_o;
  am_o.flags.width = 128;
  amort->add_option("--data", am_o.data, "Snapshot tables, one per dataset")->required();
  amort->add_option("--basis", am_o.basis, "PCA bases, one per dataset")->required();
  amort->add_option("--out", am_o.out, "Checkpoint file")->required();
  amort->add_option("--heldout", am_o.heldout, "Grid time excluded from training");
  am_o.flags.add(amort);
  amort->callback([&] {
    action = [&] {
      if (am_o.data.size() != am_o.basis.size()) throw CLI::ValidationError("need one --basis per --data");
      Manifest m("train-amortized");
      m.seed(am_o.flags.seed);
      std::vector<LatentMarginals> sets;
      Index dz = 0;
      for (std::size_t k = 0; k < am_o.data.size(); ++k) {
        m.input(am_o.data[k]);
        m.input(am_o.basis[k]);
        const PcaBasis basis = load_basis(am_o.basis[k]);
        if (k > 0 && basis.dz() != dz) throw ConfigError("all bases must share d_z");
        dz = basis.dz();
        sets.push_back(project_marginals(load_dataset(am_o.data[k]), basis));
        sets.back().dataset_id = static_cast<int>(k);
      }
      TrainConfig cfg = am_o.flags.config(static_cast<int>(dz), static_cast<int>(sets.size()), run.deterministic);
      cfg.heldout_time = am_o.heldout;
      Checkpoint ck = train_amortized(sets, cfg);
      ck.basis_ref = relative_ref(am_o.basis.front(), am_o.out);
      save_checkpoint(am_o.out, ck);
      m.output(am_o.out);
      m.write(run.manifest_for(am_o.out), *amort);
      out << am_o.out << ": best " << ck.best_score << " at step " << ck.step << '\n';
    };
  });

  // eval -----------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Score held-out marginals against baselines");
  struct {
    std::vector<std::string> checkpoints;
    Inputs in;
    std::optional<double> heldout;
    std::string metric = "emd", report;
    bool baselines = false, from_start = false;
    int relinearize = 0;
    Index max_points = 0, block = 512;
    std::optional<int> dataset_index;
    std::uint64_t seed = 0;
  } ev_o;
  eval->add_option("--checkpoint", ev_o.checkpoints, "Checkpoint file(s)")->required();
  eval->add_option("--data", ev_o.in.data, "Snapshot table")->required();
  eval->add_option("--basis", ev_o.in.basis, "PCA basis (default: the checkpoint's)");
  eval->add_option("--heldout", ev_o.heldout, "Held-out time (default: the checkpoint's)");
  eval->add_option("--metric", ev_o.metric, "emd or mmd")->check(CLI::IsMember({"emd", "mmd"}));
  eval->add_flag("--baselines", ev_o.baselines, "Also score persistence and OT-interpolate");
  eval->add_flag("--from-start", ev_o.from_start, "Roll out from the first grid time");
  eval->add_option("--relinearize-every", ev_o.relinearize, "Re-predict the operator every k targets");
  eval->add_option("--max-points", ev_o.max_points, "MMD subsample cap per side (0: all points)");
  eval->add_option("--block", ev_o.block, "MMD tile size");
  eval->add_option("--dataset-index", ev_o.dataset_index, "Dataset index for conditioned models");
  eval->add_option("--seed", ev_o.seed, "Seed for subsampling and baselines");
  eval->add_option("--report", ev_o.report, "Report CSV (a .json twin is written alongside)")->required();
  eval->callback([&] {
    action = [&] {
      Manifest m("eval");
      m.seed(ev_o.seed);
      m.input(ev_o.in.data);
      const SnapshotDataset data = load_dataset(ev_o.in.data);
      EvalReport report;
      for (const auto& path : ev_o.checkpoints) {
        m.input(path);
        const Checkpoint ck = load_checkpoint(path);
        const fs::path basis_path = resolve_basis(ev_o.in.basis, ck, path);
        m.input(basis_path);
        LatentMarginals marginals = project_marginals(data, load_basis(basis_path));
        if (ev_o.dataset_index) marginals.dataset_id = *ev_o.dataset_index;
        const std::optional<double> heldout = ev_o.heldout ? ev_o.heldout : ck.config.heldout_time;
        if (!heldout) throw ConfigError(path + ": no held-out time; pass --heldout");

        EvalOptions opts;
        opts.mode = ev_o.metric == "mmd" ? EvalMode::Mmd : EvalMode::Emd;
        opts.from_start = ev_o.from_start;
        opts.relinearize_every = ev_o.relinearize;
        opts.loss = ck.config.loss;
        opts.mmd.max_points = ev_o.max_points;
        opts.mmd.block = ev_o.block;
        opts.mmd.seed = ev_o.seed;
        opts.mmd.threads = default_threads();
        EvalEntry e = evaluate_heldout(ck.params, marginals, *heldout, opts);
        e.dataset = marginals.dataset_id.value_or(0);
        e.seed = ck.config.seed;
        report.entries.push_back(e);
        if (ev_o.baselines) {
          const Matrix& truth = marginals.at(*heldout);
          BaselineOptions bo;
          bo.seed = ev_o.seed;
          for (const auto& [name, pred] :
               {std::pair<std::string, Matrix>{"persistence", persistence_baseline(marginals, *heldout)},
                std::pair<std::string, Matrix>{"ot-interpolate", ot_interpolate_baseline(marginals, *heldout, bo)}}) {
            EvalEntry b = e;
            b.method = name;
            b.score = score_prediction(pred, truth, opts);
            report.entries.push_back(b);
          }
        }
      }
      write_file(ev_o.report, report.to_csv());
      const fs::path json_path = fs::path(ev_o.report).replace_extension(".json");
      write_file(json_path, report.to_json());
      m.output(ev_o.report);
      m.output(json_path);
      m.write(run.manifest_for(ev_o.report), *eval);
      for (const auto& s : report.summary())
        out << s.method << ' ' << s.metric << ' ' << s.mean << " +- " << s.stddev << " (n=" << s.count << ")\n";
    };
  });

  // baseline -------------------------------------------------------------------
  auto* baseline = app.add_subcommand("baseline", "Predict a held-out marginal without a model");
  struct {
    Inputs in;
    std::string method = "ot-interpolate", out;
    double heldout = 0.0;
    std::uint64_t seed = 0;
    Index exact_limit = 2000;
  } bl_o;
  baseline->add_option("--method", bl_o.method, "ot-interpolate or persistence")
      ->check(CLI::IsMember({"ot-interpolate", "persistence"}));
  baseline->add_option("--data", bl_o.in.data, "Snapshot table")->required();
  baseline->add_option("--basis", bl_o.in.basis, "PCA basis")->required();
  baseline->add_option("--heldout", bl_o.heldout, "Held-out interior time")->required();
  baseline->add_option("--seed", bl_o.seed, "Resampling seed");
  baseline->add_option("--exact-limit", bl_o.exact_limit, "Largest cloud solved exactly before Sinkhorn");
  baseline->add_option("--out", bl_o.out, "Predicted latent points (CSV)")->required();
  baseline->callback([&] {
    action = [&] {
      Manifest m("baseline");
      m.seed(bl_o.seed);
      m.input(bl_o.in.data);
      m.input(bl_o.in.basis);
      const LatentMarginals marginals = project_marginals(load_dataset(bl_o.in.data), load_basis(bl_o.in.basis));
      BaselineOptions bo;
      bo.seed = bl_o.seed;
      bo.exact_limit = bl_o.exact_limit;
      const Matrix pred = bl_o.method == "persistence" ? persistence_baseline(marginals, bl_o.heldout)
                                                       : ot_interpolate_baseline(marginals, bl_o.heldout, bo);
      write_points(bl_o.out, pred);
      m.output(bl_o.out);
      m.write(run.manifest_for(bl_o.out), *baseline);
      out << bl_o.method << " emd " << emd_exact(pred, marginals.at(bl_o.heldout)) << '\n';
    };
  });

  // interactions ---------------------------------------------------------------
  auto* inter = app.add_subcommand("interactions", "Aggregate gene interaction weights and classify edges");
  struct {
    std::vector<std::string> checkpoints;
    std::string db, out;
    Inputs in;
    Index n_cells = 10000;
    std::uint64_t seed = 0;
    std::vector<std::string> genes;
    std::size_t top_k = 10, min_edges = 10;
    bool signed_activity = false;
  } in_o;
  inter->add_option("--checkpoint", in_o.checkpoints, "Checkpoint file(s); several form an ensemble")->required();
  inter->add_option("--data", in_o.in.data, "Snapshot table")->required();
  inter->add_option("--basis", in_o.in.basis, "PCA basis (default: the checkpoint's)");
  inter->add_option("--n-cells", in_o.n_cells, "Cells averaged over");
  inter->add_option("--seed", in_o.seed, "Aggregation seed");
  inter->add_option("--genes", in_o.genes, "Gene subset (default: all)")->delimiter(',');
  inter->add_option("--db", in_o.db, "Regulatory edges (source, target, mode, references)");
  inter->add_option("--top-k", in_o.top_k, "Most active source genes kept per time (0: all)");
  inter->add_option("--min-edges", in_o.min_edges, "A source needs more than this many known edges");
  inter->add_flag("--signed-activity", in_o.signed_activity, "Rank sources by signed instead of absolute weight");
  inter->add_option("--out", in_o.out, "Report CSV (a .json twin is written alongside)")->required();
  inter->callback([&] {
    action = [&] {
      if (in_o.checkpoints.size() > 1 && in_o.db.empty())
        throw CLI::ValidationError("--db is required when several checkpoints are given");
      Manifest m("interactions");
      m.seed(in_o.seed);
      m.input(in_o.in.data);
      const SnapshotDataset data = load_dataset(in_o.in.data);
      const auto genes = in_o.genes.empty() ? std::vector<Index>{} : resolve_genes(data.gene_names(), in_o.genes);
      std::optional<RegulatoryDb> db;
      if (!in_o.db.empty()) {
        m.input(in_o.db);
        db = load_regulatory_db(in_o.db);
      }

      json models = json::array();
      std::vector<InteractionReport> reports;
      std::optional<AggregatedWeights> single;
      for (const auto& path : in_o.checkpoints) {
        m.input(path);
        const Checkpoint ck = load_checkpoint(path);
        const fs::path basis_path = resolve_basis(in_o.in.basis, ck, path);
        m.input(basis_path);
        AggregatedWeights agg =
            aggregate_weights(ck.params, load_basis(basis_path), data, in_o.n_cells, in_o.seed, genes);
        const TopSources top = top_source_genes(agg, in_o.top_k > 0 ? in_o.top_k : agg.names.size(),
                                                in_o.signed_activity);
        json j;
        j["checkpoint"] = path;
        j["cells"] = agg.cells;
        j["seed"] = agg.seed;
        j["genes"] = agg.names;
        j["top_sources"] = json::array();
        for (const auto& r : top.per_time) j["top_sources"].push_back({{"time", r.time}, {"genes", r.genes}});
        j["union"] = top.union_genes;
        if (db) {
          ClassifyOptions co;
          co.min_edges = in_o.min_edges;
          if (in_o.top_k > 0) co.top_sources = top.union_genes;
          reports.push_back(classify_edges(agg, *db, co));
          j["classification"] = json::parse(reports.back().to_json());
        } else {
          out << "top sources:";
          for (const auto& g : top.union_genes) out << ' ' << g;
          out << '\n';
        }
        models.push_back(std::move(j));
        single = std::move(agg);
      }

      json j;
      std::ostringstream csv;
      csv << std::setprecision(std::numeric_limits<double>::max_digits10);
      if (reports.size() > 1) {
        j["models"] = models;
        j["ensemble"] = json::array();
        csv << "source,models,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n";
        for (const auto& e : summarize_ensemble(reports)) {
          csv << e.gene << ',' << e.models << ',' << e.precision.mean << ',' << e.precision.std << ','
              << e.recall.mean << ',' << e.recall.std << ',' << e.f1.mean << ',' << e.f1.std << '\n';
          j["ensemble"].push_back({{"source", e.gene},
                                   {"models", e.models},
                                   {"precision", {{"mean", e.precision.mean}, {"std", e.precision.std}}},
                                   {"recall", {{"mean", e.recall.mean}, {"std", e.recall.std}}},
                                   {"f1", {{"mean", e.f1.mean}, {"std", e.f1.std}}}});
        }
        out << j["ensemble"].size() << " source genes summarized over " << reports.size() << " models\n";
      } else if (reports.size() == 1) {
        j = models.front();
        csv << reports.front().to_csv();
        out << reports.front().sources.size() << " source genes classified\n";
      } else {
        j = models.front();
        const AggregatedWeights& agg = *single;
        csv << "source,target,mean_weight\n";
        for (std::size_t s = 0; s < agg.names.size(); ++s)
          for (std::size_t t = 0; t < agg.names.size(); ++t)
            csv << agg.names[s] << ',' << agg.names[t] << ','
                << agg.mean(static_cast<Index>(t), static_cast<Index>(s)) << '\n';
      }
      const fs::path json_path = fs::path(in_o.out).replace_extension(".json");
      write_file(in_o.out, csv.str());
      write_file(json_path, j.dump(2) + "\n");
      m.output(in_o.out);
      m.output(json_path);
      m.write(run.manifest_for(in_o.out), *inter);
    };
  });

  // export-operators -------------------------------------------------------------
  auto* exp = app.add_subcommand("export-operators", "Write assembled operators for sampled cells");
  struct {
    std::string checkpoint, out;
    Inputs in;
    Index n_cells = 1000;
    std::uint64_t seed = 0;
    std::vector<std::string> markers;
  } ex_o;
  exp->add_option("--checkpoint", ex_o.checkpoint, "Checkpoint file")->required();
  exp->add_option("--data", ex_o.in.data, "Snapshot table")->required();
  exp->add_option("--basis", ex_o.in.basis, "PCA basis (default: the checkpoint's)");
  exp->add_option("--n-cells", ex_o.n_cells, "Cells exported");
  exp->add_option("--seed", ex_o.seed, "Sampling seed");
  exp->add_option("--markers", ex_o.markers, "Marker genes appended as columns")->delimiter(',');
  exp->add_option("--out", ex_o.out, "Operator CSV")->required();
  exp->callback([&] {
    action = [&] {
      Manifest m("export-operators");
      m.seed(ex_o.seed);
      m.input(ex_o.checkpoint);
      m.input(ex_o.in.data);
      const Checkpoint ck = load_checkpoint(ex_o.checkpoint);
      const fs::path basis_path = resolve_basis(ex_o.in.basis, ck, ex_o.checkpoint);
      m.input(basis_path);
      export_operators(ck.params, load_basis(basis_path), load_dataset(ex_o.in.data), ex_o.n_cells, ex_o.seed,
                       ex_o.markers, ex_o.out);
      m.output(ex_o.out);
      m.write(run.manifest_for(ex_o.out), *exp);
      out << "wrote " << ex_o.n_cells << " operators to " << ex_o.out << '\n';
    };
  });

  std::vector<const char*> argv{"cellmnn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    action();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  } catch (const cellmnn::Error& e) {
    const std::string kind = dynamic_cast<const ParseError*>(&e)      ? "parse"
                             : dynamic_cast<const ConfigError*>(&e)   ? "config"
                             : dynamic_cast<const ShapeError*>(&e)    ? "shape"
                             : dynamic_cast<const DivergenceError*>(&e) ? "divergence"
                                                                        : "error";
    err << json{{"error", kind}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace cellmnn::cli
