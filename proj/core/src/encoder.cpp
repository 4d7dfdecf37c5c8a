// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "cellmnn/encoder.hpp"

#include "cellmnn/error.hpp"
#include "cellmnn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace cellmnn {

void EncoderConfig::validate() const {
  if (depth < 1) throw ConfigError("encoder: depth must be >= 1");
  if (dz < 1) throw ConfigError("encoder: d_z must be >= 1");
  if (width < dz * dz + dz)
    throw ConfigError("encoder: width " + std::to_string(width) + " is below d_z^2 + d_z = " +
                      std::to_string(dz * dz + dz));
  if (n_datasets < 0) throw ConfigError("encoder: n_datasets must be >= 0");
  if (!(time_scale > 0.0)) throw ConfigError("encoder: time_scale must be positive");
  std::vector<int> sorted = zero_mask;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("encoder: duplicate zero_mask index");
  for (int i : sorted)
    if (i < 0 || i >= dz) throw ConfigError("encoder: zero_mask index out of range");
}

std::vector<Matrix*> EncoderParams::tensors() {
  std::vector<Matrix*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Matrix*> EncoderParams::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

namespace {

std::vector<int> layer_widths(const EncoderConfig& c) {
  std::vector<int> widths{c.input_width()};
  for (int i = 0; i < c.depth; ++i) widths.push_back(c.width);
  widths.push_back(c.output_width());
  return widths;
}

// Column of lambda for each free output slot.
std::vector<int> free_slots(const EncoderConfig& c) {
  std::vector<int> slots;
  for (int i = 0; i < c.dz; ++i)
    if (std::find(c.zero_mask.begin(), c.zero_mask.end(), i) == c.zero_mask.end()) slots.push_back(i);
  return slots;
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  Rng rng(seed);
  const auto widths = layer_widths(config);
  const double gain = std::sqrt(2.0 / (1.0 + config.leaky_slope * config.leaky_slope));
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    const double sd = gain / std::sqrt(static_cast<double>(fan_in));
    layer.weight.resize(fan_in, fan_out);
    for (Index c = 0; c < fan_out; ++c)
      for (Index r = 0; r < fan_in; ++r) layer.weight(r, c) = sd * rng.normal();
    layer.bias = Matrix::Zero(1, fan_out);
    p.layers.push_back(std::move(layer));
  }
  p.layers.back().weight *= config.out_scale;
  return p;
}

EncoderParams zero_params(const EncoderConfig& config) {
  config.validate();
  EncoderParams p;
  p.config = config;
  const auto widths = layer_widths(config);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    p.layers.push_back({Matrix::Zero(widths[l], widths[l + 1]), Matrix::Zero(1, widths[l + 1])});
  return p;
}

Matrix encoder_inputs(const EncoderConfig& config, const Matrix& z, double t,
                      std::optional<int> dataset) {
  if (z.cols() != config.dz)
    throw ShapeError("encoder: latent rows have " + std::to_string(z.cols()) + " columns, expected " +
                     std::to_string(config.dz));
  if (dataset && (*dataset < 0 || *dataset >= config.n_datasets))
    throw ConfigError("encoder: dataset index " + std::to_string(*dataset) + " outside [0, " +
                      std::to_string(config.n_datasets) + ")");
  if (!dataset && config.n_datasets > 0)
    throw ConfigError("encoder: conditioned encoder requires a dataset index");
  Matrix in = Matrix::Zero(z.rows(), config.input_width());
  in.leftCols(config.dz) = z;
  in.col(config.dz).setConstant(t / config.time_scale);
  if (dataset) in.col(config.dz + 1 + *dataset).setOnes();
  return in;
}

Matrix encoder_forward(const EncoderParams& params, const Matrix& inputs) {
  Matrix h = inputs;
  const double slope = params.config.leaky_slope;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix next = h * params.layers[l].weight;
    next.rowwise() += params.layers[l].bias.row(0);
    if (l + 1 < params.layers.size())
      next = next.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
    h = std::move(next);
  }
  return h;
}

EigenOperator decode_operator(const EncoderConfig& config,
                              const Eigen::Ref<const Eigen::RowVectorXd>& raw) {
  const int d = config.dz;
  EigenOperator op;
  op.basis.resize(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) op.basis(r, c) = raw[r * d + c] + (r == c ? 1.0 : 0.0);
  op.eigenvalues = Vector::Zero(d);
  const auto slots = free_slots(config);
  for (std::size_t k = 0; k < slots.size(); ++k) op.eigenvalues[slots[k]] = raw[d * d + static_cast<Index>(k)];
  op.zero_mask = config.zero_mask;
  return op;
}

std::vector<EigenOperator> predict_operators(const EncoderParams& params, const Matrix& z,
                                             double t, std::optional<int> dataset) {
  const Matrix raw = encoder_forward(params, encoder_inputs(params.config, z, t, dataset));
  std::vector<EigenOperator> ops;
  ops.reserve(static_cast<std::size_t>(raw.rows()));
  for (Index i = 0; i < raw.rows(); ++i) ops.push_back(decode_operator(params.config, raw.row(i)));
  return ops;
}

EigenOperator predict_operator(const EncoderParams& params, const Vector& z, double t,
                               std::optional<int> dataset) {
  return predict_operators(params, z.transpose(), t, dataset).front();
}

Vector push_forward(const EncoderParams& params, const PcaBasis& basis, const Vector& x,
                    double t, double dt, std::optional<int> dataset) {
  const Vector z = basis.project(x);
  const FactoredOperator op(predict_operator(params, z, t, dataset));
  return basis.backproject(op.evolve(z, dt));
}

Matrix push_latent_rows(const EncoderParams& params, const Matrix& z, double t, double dt,
                        std::optional<int> dataset) {
  const auto ops = predict_operators(params, z, t, dataset);
  Matrix out(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i)
    out.row(i) = FactoredOperator(ops[static_cast<std::size_t>(i)]).evolve(z.row(i).transpose(), dt).transpose();
  return out;
}

std::vector<Vector> rollout(const EncoderParams& params, const Vector& z, double t,
                            std::span<const double> targets, std::optional<int> dataset,
                            int relinearize_every) {
  std::vector<Vector> out;
  out.reserve(targets.size());
  Vector anchor_z = z;
  double anchor_t = t;
  FactoredOperator op(predict_operator(params, anchor_z, anchor_t, dataset));
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (targets[k] < anchor_t) throw ConfigError("rollout: targets must be ascending and >= t");
    out.push_back(op.evolve(anchor_z, targets[k] - anchor_t));
    if (relinearize_every > 0 && (k + 1) % static_cast<std::size_t>(relinearize_every) == 0) {
      anchor_z = out.back();
      anchor_t = targets[k];
      op = FactoredOperator(predict_operator(params, anchor_z, anchor_t, dataset));
    }
  }
  return out;
}

// -- BoundEncoder --------------------------------------------------------------

BoundEncoder::BoundEncoder(diff::Tape& tape, const EncoderParams& params) : config_(params.config) {
  for (const Matrix* m : params.tensors()) vars_.push_back(tape.leaf(*m));
}

BoundEncoder::BoundEncoder(const EncoderConfig& config, std::vector<diff::Var> vars)
    : config_(config), vars_(std::move(vars)) {
  if (vars_.size() != 2 * static_cast<std::size_t>(config_.depth + 1))
    throw ConfigError("BoundEncoder: expected " + std::to_string(2 * (config_.depth + 1)) + " tensors");
}

OperatorNodes predict_operator_nodes(const BoundEncoder& encoder, const Matrix& z, double t,
                                     std::optional<int> dataset) {
  const EncoderConfig& c = encoder.config();
  diff::Tape& tape = encoder.tape();
  diff::Var h = tape.constant(encoder_inputs(c, z, t, dataset));
  const auto& vars = encoder.vars();
  const std::size_t n_layers = vars.size() / 2;
  for (std::size_t l = 0; l < n_layers; ++l) {
    h = diff::bias_add(diff::matmul(h, vars[2 * l]), vars[2 * l + 1]);
    if (l + 1 < n_layers) h = diff::leaky_relu(h, c.leaky_slope);
  }

  const int d = c.dz;
  const int f = c.free_eigenvalues();
  diff::Var eye = tape.constant(Matrix::Identity(d, d));
  std::optional<diff::Var> scatter;
  if (!c.zero_mask.empty() && f > 0) {
    Matrix s = Matrix::Zero(d, f);
    const auto slots = free_slots(c);
    for (int k = 0; k < f; ++k) s(slots[static_cast<std::size_t>(k)], k) = 1.0;
    scatter = tape.constant(std::move(s));
  }
  diff::Var all_zero;
  if (f == 0) all_zero = tape.constant(Matrix::Zero(d, 1));

  OperatorNodes out;
  const auto n = static_cast<std::size_t>(z.rows());
  out.basis.reserve(n);
  out.basis_inv.reserve(n);
  out.basis_det.reserve(n);
  out.eigenvalues.reserve(n);
  for (Index i = 0; i < z.rows(); ++i) {
    diff::Var p = diff::add(diff::reshape(diff::block(h, i, 0, 1, d * d), d, d), eye);
    auto [p_inv, p_det] = diff::inverse_and_det(p);
    diff::Var lambda;
    if (f == 0) {
      lambda = all_zero;
    } else {
      lambda = diff::transpose(diff::block(h, i, d * d, 1, f));
      if (scatter) lambda = diff::matmul(*scatter, lambda);
    }
    out.basis.push_back(p);
    out.basis_inv.push_back(p_inv);
    out.basis_det.push_back(p_det);
    out.eigenvalues.push_back(lambda);
  }
  return out;
}

// -- Serialization -------------------------------------------------------------

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(flat.size()) != rows * cols) throw ParseError("encoder json: matrix size mismatch", 0);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace

std::string encoder_to_json(const EncoderParams& params) {
  const auto& c = params.config;
  nlohmann::json j;
  j["format"] = "cellmnn-encoder";
  j["version"] = 1;
  j["config"] = {{"depth", c.depth},           {"width", c.width},
                 {"dz", c.dz},                 {"n_datasets", c.n_datasets},
                 {"zero_mask", c.zero_mask},   {"leaky_slope", c.leaky_slope},
                 {"out_scale", c.out_scale},   {"time_scale", c.time_scale}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers)
    layers.push_back({{"weight", matrix_json(l.weight)}, {"bias", matrix_json(l.bias)}});
  j["layers"] = std::move(layers);
  return j.dump();
}

EncoderParams encoder_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("encoder json: ") + e.what(), 0);
  }
  if (j.value("format", "") != "cellmnn-encoder") throw ParseError("encoder json: wrong format tag", 0);
  if (j.value("version", 0) != 1) throw ParseError("encoder json: unsupported version", 0);
  EncoderParams p;
  const auto& c = j.at("config");
  p.config.depth = c.at("depth").get<int>();
  p.config.width = c.at("width").get<int>();
  p.config.dz = c.at("dz").get<int>();
  p.config.n_datasets = c.at("n_datasets").get<int>();
  p.config.zero_mask = c.at("zero_mask").get<std::vector<int>>();
  p.config.leaky_slope = c.at("leaky_slope").get<double>();
  p.config.out_scale = c.at("out_scale").get<double>();
  p.config.time_scale = c.at("time_scale").get<double>();
  p.config.validate();
  for (const auto& l : j.at("layers"))
    p.layers.push_back({matrix_from_json(l.at("weight")), matrix_from_json(l.at("bias"))});
  const auto widths = layer_widths(p.config);
  if (p.layers.size() + 1 != widths.size()) throw ParseError("encoder json: layer count mismatch", 0);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (p.layers[l].weight.rows() != widths[l] || p.layers[l].weight.cols() != widths[l + 1] ||
        p.layers[l].bias.rows() != 1 || p.layers[l].bias.cols() != widths[l + 1])
      throw ParseError("encoder json: layer " + std::to_string(l) + " has wrong shape", 0);
  }
  return p;
}

}  // namespace cellmnn
