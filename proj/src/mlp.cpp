#include "vbac/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vbac/early_stop.hpp"
#include "vbac/errors.hpp"
#include "vbac/eval.hpp"

namespace vbac {

namespace {

constexpr double kProbabilityFloor = 1e-12;

double leaky(double v, double slope) { return v > 0 ? v : slope * v; }

Eigen::MatrixXd leaky(const Eigen::MatrixXd& m, double slope) {
  return m.unaryExpr([slope](double v) { return leaky(v, slope); });
}

double clamp_probability(double p) { return std::clamp(p, kProbabilityFloor, 1 - kProbabilityFloor); }

void write_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.f64s(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

Eigen::VectorXd read_vector(ByteReader& r) {
  const auto values = r.f64s();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

// GEMM inference, used only to monitor training-set AUC. Public predictions
// go through the row kernel so batch and single-row results agree exactly.
Eigen::VectorXd infer_batch(const MlpModel& model, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd a = x.transpose();
  for (const auto& layer : model.hidden) {
    Eigen::MatrixXd z = (layer.weight * a).colwise() + layer.bias;
    const Eigen::ArrayXd scale = layer.gamma.array() / (layer.running_var.array() + model.bn_epsilon).sqrt();
    z.colwise() -= layer.running_mean;
    z.array().colwise() *= scale;
    z.colwise() += layer.beta;
    a = leaky(z, model.leaky_slope);
  }
  Eigen::VectorXd logits = (model.out_weight.transpose() * a).transpose();
  logits.array() += model.out_bias;
  return logits.unaryExpr([](double z) { return clamp_probability(sigmoid(z)); });
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

double auc_of(const Eigen::VectorXd& scores, std::span<const std::uint8_t> labels) {
  return roc_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
}

}  // namespace

void MlpConfig::validate() const {
  if (hidden.empty()) throw ConfigError("mlp: at least one hidden layer is required");
  if (dropout.size() != hidden.size()) throw ConfigError("mlp: one dropout rate per hidden layer is required");
  for (int h : hidden)
    if (h <= 0) throw ConfigError("mlp: hidden sizes must be positive");
  for (double d : dropout)
    if (!(d >= 0 && d < 1)) throw ConfigError("mlp: dropout rates must lie in [0, 1)");
  if (!(learning_rate > 0)) throw ConfigError("mlp: learning rate must be positive");
  if (batch_size <= 0 || max_epochs <= 0 || patience <= 0) throw ConfigError("mlp: batch size, epochs and patience must be positive");
  if (l2 < 0) throw ConfigError("mlp: l2 must be >= 0");
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw ConfigError("mlp: validation fraction must lie in (0, 1)");
}

MlpModel init_mlp(Eigen::Index input_size, const MlpConfig& config, Rng& rng) {
  config.validate();
  if (input_size <= 0) throw ShapeError("mlp: input has no columns");
  MlpModel model;
  model.leaky_slope = config.leaky_slope;
  model.bn_epsilon = config.bn_epsilon;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Index fan_in = input_size;
  for (std::size_t l = 0; l < config.hidden.size(); ++l) {
    const Eigen::Index units = config.hidden[l];
    HiddenLayer layer;
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    layer.weight.resize(units, fan_in);
    for (Eigen::Index j = 0; j < fan_in; ++j)
      for (Eigen::Index i = 0; i < units; ++i) layer.weight(i, j) = sd * normal(rng);
    layer.bias = Eigen::VectorXd::Zero(units);
    layer.gamma = Eigen::VectorXd::Ones(units);
    layer.beta = Eigen::VectorXd::Zero(units);
    layer.running_mean = Eigen::VectorXd::Zero(units);
    layer.running_var = Eigen::VectorXd::Ones(units);
    layer.dropout = config.dropout[l];
    model.hidden.push_back(std::move(layer));
    fan_in = units;
  }
  const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
  model.out_weight.resize(fan_in);
  for (Eigen::Index j = 0; j < fan_in; ++j) model.out_weight(j) = sd * normal(rng);
  return model;
}

DropoutMasks sample_dropout(const MlpModel& model, Eigen::Index batch, Rng& rng) {
  DropoutMasks masks;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& layer : model.hidden) {
    const Eigen::Index units = layer.weight.rows();
    Eigen::MatrixXd m(units, batch);
    if (layer.dropout == 0) {
      m.setOnes();
    } else {
      const double keep = 1.0 - layer.dropout;
      for (Eigen::Index j = 0; j < batch; ++j)
        for (Eigen::Index i = 0; i < units; ++i) m(i, j) = unit(rng) < keep ? 1.0 / keep : 0.0;
    }
    masks.scale.push_back(std::move(m));
  }
  return masks;
}

DropoutMasks no_dropout(const MlpModel& model, Eigen::Index batch) {
  DropoutMasks masks;
  for (const auto& layer : model.hidden) masks.scale.push_back(Eigen::MatrixXd::Ones(layer.weight.rows(), batch));
  return masks;
}

Eigen::VectorXd forward_train(const MlpModel& model, const Eigen::MatrixXd& x, const DropoutMasks& masks,
                              ForwardCache& cache) {
  if (x.cols() != model.input_size())
    throw ShapeError("mlp expects " + std::to_string(model.input_size()) + " columns, got " + std::to_string(x.cols()));
  if (masks.scale.size() != model.hidden.size()) throw ShapeError("mlp: dropout mask count mismatch");
  const Eigen::Index batch = x.rows();
  cache.layers.clear();
  cache.ready = false;
  Eigen::MatrixXd a = x.transpose();
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const auto& layer = model.hidden[l];
    if (masks.scale[l].rows() != layer.weight.rows() || masks.scale[l].cols() != batch)
      throw ShapeError("mlp: dropout mask shape mismatch");
    ForwardCache::Layer c;
    c.input = std::move(a);
    Eigen::MatrixXd z = (layer.weight * c.input).colwise() + layer.bias;
    c.mean = z.rowwise().mean();
    z.colwise() -= c.mean;
    c.var = z.array().square().rowwise().mean();
    c.inv_std = (c.var.array() + model.bn_epsilon).rsqrt();
    c.xhat = z.array().colwise() * c.inv_std.array();
    c.pre_activation = c.xhat.array().colwise() * layer.gamma.array();
    c.pre_activation.colwise() += layer.beta;
    c.mask = masks.scale[l];
    a = leaky(c.pre_activation, model.leaky_slope).cwiseProduct(c.mask);
    cache.layers.push_back(std::move(c));
  }
  cache.logits = (model.out_weight.transpose() * a).transpose();
  cache.logits.array() += model.out_bias;
  cache.last = std::move(a);
  cache.ready = true;
  return cache.logits.unaryExpr([](double z) { return sigmoid(z); });
}

Eigen::VectorXd forward(const MlpModel& model, const Eigen::MatrixXd& x, Mode mode, Rng* rng) {
  if (mode == Mode::kInfer) return predict_proba(model, x);
  const bool any_dropout =
      std::any_of(model.hidden.begin(), model.hidden.end(), [](const HiddenLayer& l) { return l.dropout > 0; });
  if (any_dropout && rng == nullptr) throw ConfigError("mlp: training-mode forward with dropout needs a generator");
  const DropoutMasks masks = any_dropout ? sample_dropout(model, x.rows(), *rng) : no_dropout(model, x.rows());
  ForwardCache cache;
  return forward_train(model, x, masks, cache);
}

void update_running_stats(MlpModel& model, const ForwardCache& cache, double momentum) {
  if (!cache.ready) throw ConfigError("mlp: running statistics need a cached training pass");
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    auto& layer = model.hidden[l];
    layer.running_mean = momentum * layer.running_mean + (1 - momentum) * cache.layers[l].mean;
    layer.running_var = momentum * layer.running_var + (1 - momentum) * cache.layers[l].var;
  }
}

double weighted_bce(std::span<const double> probabilities, std::span<const std::uint8_t> labels,
                    const ClassWeights& weights) {
  if (probabilities.size() != labels.size()) throw ShapeError("probabilities and labels differ in length");
  if (probabilities.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = clamp_probability(probabilities[i]);
    total += weights(labels[i]) * -(labels[i] ? std::log(p) : std::log1p(-p));
  }
  return total / static_cast<double>(labels.size());
}

double l2_penalty(const MlpModel& model, double l2) {
  double s = 0;
  for (const auto& layer : model.hidden) s += layer.weight.squaredNorm();
  return l2 * s;
}

double training_loss(const MlpModel& model, const ForwardCache& cache, std::span<const std::uint8_t> labels,
                     const ClassWeights& weights, double l2) {
  if (!cache.ready) throw ConfigError("mlp: loss needs a cached training pass");
  if (static_cast<std::size_t>(cache.logits.size()) != labels.size()) throw ShapeError("mlp: label count mismatch");
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = cache.logits(static_cast<Eigen::Index>(i));
    total += weights(labels[i]) * -(labels[i] ? log_sigmoid(z) : log_sigmoid(-z));
  }
  return total / static_cast<double>(labels.size()) + l2_penalty(model, l2);
}

MlpGradients backward(const MlpModel& model, const ForwardCache& cache, std::span<const std::uint8_t> labels,
                      const ClassWeights& weights, double l2) {
  if (!cache.ready || cache.layers.size() != model.hidden.size())
    throw ConfigError("mlp: backward called without a cached forward pass");
  const Eigen::Index batch = cache.logits.size();
  if (static_cast<std::size_t>(batch) != labels.size()) throw ShapeError("mlp: label count mismatch");
  const double inv_batch = 1.0 / static_cast<double>(batch);

  Eigen::VectorXd dlogit(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    dlogit(i) = weights(y) * (sigmoid(cache.logits(i)) - y) * inv_batch;
  }

  MlpGradients g;
  g.out_weight = cache.last * dlogit;
  g.out_bias = dlogit.sum();
  Eigen::MatrixXd da = model.out_weight * dlogit.transpose();
  g.hidden.resize(model.hidden.size());
  for (std::size_t l = model.hidden.size(); l-- > 0;) {
    const auto& layer = model.hidden[l];
    const auto& c = cache.layers[l];
    const double slope = model.leaky_slope;
    const Eigen::MatrixXd dy = da.cwiseProduct(c.mask).cwiseProduct(
        c.pre_activation.unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; }));
    auto& gl = g.hidden[l];
    gl.gamma = dy.cwiseProduct(c.xhat).rowwise().sum();
    gl.beta = dy.rowwise().sum();
    const Eigen::MatrixXd dxhat = dy.array().colwise() * layer.gamma.array();
    const Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
    const Eigen::VectorXd sum_dxhat_xhat = dxhat.cwiseProduct(c.xhat).rowwise().sum();
    // Batch-norm backward through the batch mean and variance.
    Eigen::MatrixXd dz = static_cast<double>(batch) * dxhat;
    dz.colwise() -= sum_dxhat;
    dz -= (c.xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
    dz.array().colwise() *= (c.inv_std * inv_batch).array();
    gl.weight = dz * c.input.transpose() + 2.0 * l2 * layer.weight;
    gl.bias = dz.rowwise().sum();
    if (l > 0) da = layer.weight.transpose() * dz;
  }
  return g;
}

std::vector<std::span<double>> parameter_views(MlpModel& model) {
  std::vector<std::span<double>> out;
  auto add = [&](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (auto& layer : model.hidden) {
    add(layer.weight);
    add(layer.bias);
    add(layer.gamma);
    add(layer.beta);
  }
  add(model.out_weight);
  out.emplace_back(&model.out_bias, 1);
  return out;
}

std::vector<std::span<const double>> gradient_views(const MlpGradients& grads) {
  std::vector<std::span<const double>> out;
  auto add = [&](const auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (const auto& layer : grads.hidden) {
    add(layer.weight);
    add(layer.bias);
    add(layer.gamma);
    add(layer.beta);
  }
  add(grads.out_weight);
  out.emplace_back(&grads.out_bias, 1);
  return out;
}

void Adam::step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size() || params[k].size() != m_[k].size())
      throw ShapeError("adam: parameter shape changed between steps");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k][i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
      params[k][i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
  }
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,train_auc,val_auc\n";
  for (std::size_t e = 0; e < epochs.size(); ++e)
    out += std::to_string(e + 1) + "," + format_double(epochs[e].train_loss) + "," + format_double(epochs[e].val_loss) +
           "," + format_double(epochs[e].train_auc) + "," + format_double(epochs[e].val_auc) + "\n";
  return out;
}

MlpFit train_mlp(const MlpConfig& config, const Eigen::MatrixXd& train_x, std::span<const std::uint8_t> train_y,
                 const Eigen::MatrixXd& val_x, std::span<const std::uint8_t> val_y,
                 std::optional<ClassWeights> weights) {
  config.validate();
  if (static_cast<std::size_t>(train_x.rows()) != train_y.size() || static_cast<std::size_t>(val_x.rows()) != val_y.size())
    throw ShapeError("mlp: rows and labels differ");
  if (val_x.cols() != train_x.cols()) throw ShapeError("mlp: train and validation widths differ");
  const auto val_pos = std::count(val_y.begin(), val_y.end(), 1);
  if (val_pos == 0 || static_cast<std::size_t>(val_pos) == val_y.size())
    throw DataError("validation labels", "both classes are needed for validation AUC");
  const ClassWeights w = weights ? *weights : compute_class_weights(train_y);

  Rng rng(config.seed);
  MlpModel model = init_mlp(train_x.cols(), config, rng);
  Adam adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  EarlyStopper stopper(config.patience, config.min_delta);
  MlpFit fit;
  MlpModel best = model;

  std::vector<std::size_t> order(train_y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  ForwardCache cache;
  std::vector<std::uint8_t> batch_y;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const Eigen::MatrixXd xb = gather_rows(train_x, rows);
      batch_y.clear();
      for (auto r : rows) batch_y.push_back(train_y[r]);
      const DropoutMasks masks = sample_dropout(model, xb.rows(), rng);
      forward_train(model, xb, masks, cache);
      loss_sum += training_loss(model, cache, batch_y, w, config.l2) * static_cast<double>(rows.size());
      const MlpGradients grads = backward(model, cache, batch_y, w, config.l2);
      adam.step(parameter_views(model), gradient_views(grads));
      update_running_stats(model, cache, config.bn_momentum);
    }

    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const Eigen::VectorXd val_p = predict_proba(model, val_x);
    rec.val_loss = weighted_bce(std::span<const double>(val_p.data(), static_cast<std::size_t>(val_p.size())), val_y, w) +
                   l2_penalty(model, config.l2);
    rec.val_auc = auc_of(val_p, val_y);
    rec.train_auc = auc_of(infer_batch(model, train_x), train_y);
    fit.history.epochs.push_back(rec);

    const bool stop = stopper.update(rec.val_auc);
    if (stopper.improved_last()) best = model;
    if (stop) {
      fit.history.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  fit.history.best_epoch = stopper.best_step();
  fit.model = std::move(best);
  return fit;
}

double predict_proba_row(const MlpModel& model, std::span<const double> row) {
  if (static_cast<Eigen::Index>(row.size()) != model.input_size())
    throw ShapeError("mlp expects " + std::to_string(model.input_size()) + " columns, got " + std::to_string(row.size()));
  std::vector<double> a(row.begin(), row.end()), next;
  for (const auto& layer : model.hidden) {
    const Eigen::Index units = layer.weight.rows();
    next.assign(static_cast<std::size_t>(units), 0.0);
    for (Eigen::Index k = 0; k < units; ++k) {
      double s = layer.bias(k);
      for (std::size_t j = 0; j < a.size(); ++j) s += layer.weight(k, static_cast<Eigen::Index>(j)) * a[j];
      const double y =
          (s - layer.running_mean(k)) / std::sqrt(layer.running_var(k) + model.bn_epsilon) * layer.gamma(k) + layer.beta(k);
      next[static_cast<std::size_t>(k)] = leaky(y, model.leaky_slope);
    }
    a.swap(next);
  }
  double z = model.out_bias;
  for (std::size_t j = 0; j < a.size(); ++j) z += model.out_weight(static_cast<Eigen::Index>(j)) * a[j];
  return clamp_probability(sigmoid(z));
}

Eigen::VectorXd predict_proba(const MlpModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.input_size())
    throw ShapeError("mlp expects " + std::to_string(model.input_size()) + " columns, got " + std::to_string(x.cols()));
  Eigen::VectorXd out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    out(i) = predict_proba_row(model, row);
  }
  return out;
}

void MlpModel::write(ByteWriter& w) const {
  w.u32(static_cast<std::uint32_t>(hidden.size()));
  for (const auto& layer : hidden) {
    w.u64(static_cast<std::uint64_t>(layer.weight.rows()));
    w.u64(static_cast<std::uint64_t>(layer.weight.cols()));
    w.f64s(std::span<const double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())));
    write_vector(w, layer.bias);
    write_vector(w, layer.gamma);
    write_vector(w, layer.beta);
    write_vector(w, layer.running_mean);
    write_vector(w, layer.running_var);
    w.f64(layer.dropout);
  }
  write_vector(w, out_weight);
  w.f64(out_bias);
  w.f64(leaky_slope);
  w.f64(bn_epsilon);
}

MlpModel MlpModel::read(ByteReader& r) {
  MlpModel m;
  const auto layers = r.u32();
  if (layers > 64) throw FormatError("mlp: implausible layer count");
  Eigen::Index expected_in = -1;
  for (std::uint32_t l = 0; l < layers; ++l) {
    HiddenLayer layer;
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    const auto data = r.f64s();
    if (rows <= 0 || cols <= 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw FormatError("mlp: kernel shape does not match its data");
    if (expected_in >= 0 && cols != expected_in) throw FormatError("mlp: layer shapes do not chain");
    layer.weight = Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
    layer.bias = read_vector(r);
    layer.gamma = read_vector(r);
    layer.beta = read_vector(r);
    layer.running_mean = read_vector(r);
    layer.running_var = read_vector(r);
    layer.dropout = r.f64();
    for (const auto* v : {&layer.bias, &layer.gamma, &layer.beta, &layer.running_mean, &layer.running_var})
      if (v->size() != rows) throw FormatError("mlp: per-unit vector length mismatch");
    if ((layer.running_var.array() <= 0).any()) throw FormatError("mlp: running variance must be positive");
    expected_in = rows;
    m.hidden.push_back(std::move(layer));
  }
  m.out_weight = read_vector(r);
  if (expected_in >= 0 && m.out_weight.size() != expected_in) throw FormatError("mlp: output layer shape mismatch");
  m.out_bias = r.f64();
  m.leaky_slope = r.f64();
  m.bn_epsilon = r.f64();
  return m;
}

}  // namespace vbac
