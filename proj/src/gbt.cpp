#include "vbac/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vbac/early_stop.hpp"
#include "vbac/errors.hpp"
#include "vbac/eval.hpp"

namespace vbac {

namespace {

constexpr double kProbabilityFloor = 1e-12;

double leaf_weight(double g, double h, double lambda) {
  const double denom = h + lambda;
  return denom > 0 ? -g / denom : 0.0;
}

double score(double g, double h, double lambda) {
  const double denom = h + lambda;
  return denom > 0 ? g * g / denom : 0.0;
}

struct NodeStats {
  double g = 0;
  double h = 0;
};

struct Candidate {
  double gain = 0;  // loss reduction, before gamma
  int feature = -1;
  double threshold = 0;
  NodeStats left;
};

// Per-node scan state while walking a presorted column.
struct Scan {
  NodeStats left;
  double last = 0;
  bool seen = false;
};

// Midpoint that still sends `lo` left and `hi` right under x < t.
double split_point(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2;
  return mid > lo ? mid : hi;
}

Tree grow(const Eigen::MatrixXd& x, std::span<const double> g, std::span<const double> h,
          std::span<const std::size_t> rows, std::span<const std::size_t> columns,
          const std::vector<std::vector<std::uint32_t>>* presorted, const TreeParams& params) {
  const auto n = static_cast<std::size_t>(x.rows());
  Tree tree;
  // node_of[r] is the open node holding row r, or -1.
  std::vector<int> node_of(n, -1);
  NodeStats root;
  for (auto r : rows) {
    node_of[r] = 0;
    root.g += g[r];
    root.h += h[r];
  }
  tree.nodes.push_back({});
  tree.nodes[0].cover = root.h;
  std::vector<NodeStats> stats{root};
  std::vector<int> open{0};

  // Column order used when no presorted index was supplied.
  std::vector<std::vector<std::uint32_t>> local;
  if (presorted == nullptr) {
    local.resize(static_cast<std::size_t>(x.cols()));
    for (auto c : columns) {
      auto& idx = local[c];
      idx.assign(rows.begin(), rows.end());
      std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
        return x(a, static_cast<Eigen::Index>(c)) < x(b, static_cast<Eigen::Index>(c));
      });
    }
    presorted = &local;
  }

  for (int depth = 0; depth < params.max_depth && !open.empty(); ++depth) {
    // Slot per open node, indexed by node id.
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < open.size(); ++k) slot[static_cast<std::size_t>(open[k])] = static_cast<int>(k);
    std::vector<Candidate> best(open.size());
    std::vector<Scan> scan(open.size());

    for (auto c : columns) {
      std::fill(scan.begin(), scan.end(), Scan{});
      const auto col = static_cast<Eigen::Index>(c);
      for (std::uint32_t r : (*presorted)[c]) {
        const int node = node_of[r];
        if (node < 0) continue;
        const int k = slot[static_cast<std::size_t>(node)];
        if (k < 0) continue;
        auto& s = scan[static_cast<std::size_t>(k)];
        const double v = x(static_cast<Eigen::Index>(r), col);
        if (s.seen && v != s.last) {
          const NodeStats& total = stats[static_cast<std::size_t>(node)];
          const NodeStats right{total.g - s.left.g, total.h - s.left.h};
          if (s.left.h >= params.min_child_weight && right.h >= params.min_child_weight) {
            const double gain = 0.5 * (score(s.left.g, s.left.h, params.lambda) + score(right.g, right.h, params.lambda) -
                                       score(total.g, total.h, params.lambda));
            auto& b = best[static_cast<std::size_t>(k)];
            if (gain - params.gamma > 0 && gain > b.gain) b = {gain, static_cast<int>(c), split_point(s.last, v), s.left};
          }
        }
        s.left.g += g[r];
        s.left.h += h[r];
        s.last = v;
        s.seen = true;
      }
    }

    std::vector<int> next_open;
    std::vector<int> left_of(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < open.size(); ++k) {
      const int node = open[k];
      const auto& b = best[k];
      if (b.feature < 0) continue;
      const NodeStats total = stats[static_cast<std::size_t>(node)];
      const NodeStats right{total.g - b.left.g, total.h - b.left.h};
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      stats.push_back(b.left);
      stats.push_back(right);
      tree.nodes[static_cast<std::size_t>(l)].cover = b.left.h;
      tree.nodes[static_cast<std::size_t>(l) + 1].cover = right.h;
      auto& parent = tree.nodes[static_cast<std::size_t>(node)];
      parent.feature = b.feature;
      parent.threshold = b.threshold;
      parent.left = l;
      parent.right = l + 1;
      parent.gain = b.gain;
      left_of[static_cast<std::size_t>(node)] = l;
      next_open.push_back(l);
      next_open.push_back(l + 1);
    }
    for (auto r : rows) {
      const int node = node_of[r];
      if (node < 0 || static_cast<std::size_t>(node) >= left_of.size()) continue;
      const int l = left_of[static_cast<std::size_t>(node)];
      if (l < 0) {
        node_of[r] = -1;  // settled in a leaf
        continue;
      }
      const auto& parent = tree.nodes[static_cast<std::size_t>(node)];
      node_of[r] = x(static_cast<Eigen::Index>(r), parent.feature) < parent.threshold ? l : l + 1;
    }
    open = std::move(next_open);
  }

  for (std::size_t i = 0; i < tree.nodes.size(); ++i)
    if (tree.nodes[i].feature < 0) tree.nodes[i].value = leaf_weight(stats[i].g, stats[i].h, params.lambda);
  return tree;
}

std::size_t sample_count(std::size_t n, double rate) {
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * rate));
  return std::clamp<std::size_t>(k, 1, n);
}

// Without replacement; returned sorted. Rate 1 takes everything and leaves
// the generator untouched.
std::vector<std::size_t> sample_indices(std::size_t n, double rate, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (rate >= 1.0) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(sample_count(n, rate));
  std::sort(idx.begin(), idx.end());
  return idx;
}

double sample_weight(std::uint8_t label, std::uint8_t weighted_label, double alpha) {
  return label == weighted_label ? alpha : 1.0;
}

// Tree::predict without copying the row out of the matrix.
double tree_value(const Tree& tree, const Eigen::MatrixXd& x, Eigen::Index r) {
  int id = 0;
  while (true) {
    const auto& node = tree.nodes[static_cast<std::size_t>(id)];
    if (node.feature < 0) return node.value;
    id = x(r, node.feature) < node.threshold ? node.left : node.right;
  }
}

std::string format_node(const Tree& tree, int id, int depth, const std::vector<std::string>& names) {
  const auto& node = tree.nodes[static_cast<std::size_t>(id)];
  std::string line(static_cast<std::size_t>(depth), '\t');
  line += std::to_string(id) + ":";
  if (node.feature < 0) return line + "leaf=" + format_double(node.value) + " cover=" + format_double(node.cover) + "\n";
  const auto f = static_cast<std::size_t>(node.feature);
  const std::string fname = f < names.size() ? names[f] : "f" + std::to_string(f);
  line += "[" + fname + "<" + format_double(node.threshold) + "] yes=" + std::to_string(node.left) +
          ",no=" + std::to_string(node.right) + " gain=" + format_double(node.gain) +
          " cover=" + format_double(node.cover) + "\n";
  return line + format_node(tree, node.left, depth + 1, names) + format_node(tree, node.right, depth + 1, names);
}

}  // namespace

void GbtConfig::validate() const {
  if (rounds < 0) throw ConfigError("gbt: rounds must be >= 0");
  if (!(learning_rate >= 0)) throw ConfigError("gbt: learning rate must be >= 0");
  if (max_depth < 1) throw ConfigError("gbt: max depth must be >= 1");
  if (!(subsample > 0 && subsample <= 1)) throw ConfigError("gbt: subsample must lie in (0, 1]");
  if (!(colsample > 0 && colsample <= 1)) throw ConfigError("gbt: colsample must lie in (0, 1]");
  if (!(alpha > 0)) throw ConfigError("gbt: alpha must be positive");
  if (lambda < 0 || gamma < 0 || min_child_weight < 0) throw ConfigError("gbt: lambda, gamma and min_child_weight must be >= 0");
  if (early_stopping_rounds < 1) throw ConfigError("gbt: early stopping rounds must be >= 1");
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw ConfigError("gbt: validation fraction must lie in (0, 1)");
}

GradHess weighted_logloss_grad_hess(double margin, std::uint8_t label, double alpha) {
  const double p = sigmoid(margin);
  const double y = label ? 1.0 : 0.0;
  return {alpha * y * (p - 1) + (1 - y) * p, p * (1 - p) * (alpha * y + (1 - y))};
}

double weighted_logloss(double margin, std::uint8_t label, double alpha) {
  return label ? -alpha * log_sigmoid(margin) : -log_sigmoid(-margin);
}

double Tree::predict(std::span<const double> row) const {
  int id = 0;
  while (true) {
    const auto& node = nodes[static_cast<std::size_t>(id)];
    if (node.feature < 0) return node.value;
    id = row[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
  }
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].feature < 0) continue;
    d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
    d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    deepest = std::max(deepest, d[i] + 1);
  }
  return deepest;
}

int Tree::leaves() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

Tree fit_tree(const Eigen::MatrixXd& x, std::span<const double> g, std::span<const double> h,
              std::span<const std::size_t> rows, std::span<const std::size_t> columns, const TreeParams& params) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (g.size() != n || h.size() != n) throw ShapeError("fit_tree: gradient length differs from row count");
  for (auto c : columns)
    if (c >= static_cast<std::size_t>(x.cols())) throw ShapeError("fit_tree: column index out of range");
  for (auto r : rows)
    if (r >= n) throw ShapeError("fit_tree: row index out of range");
  for (double v : h)
    if (v < 0) throw DataError("hessian", "must be non-negative");
  return grow(x, g, h, rows, columns, nullptr, params);
}

Tree fit_tree(const Eigen::MatrixXd& x, std::span<const double> g, std::span<const double> h,
              const TreeParams& params) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows())), cols(static_cast<std::size_t>(x.cols()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  return fit_tree(x, g, h, rows, cols, params);
}

std::string GbtHistory::to_csv() const {
  std::string out = "round,train_loss,val_auc\n";
  for (std::size_t i = 0; i < train_loss.size(); ++i)
    out += std::to_string(i + 1) + "," + format_double(train_loss[i]) + "," + format_double(val_auc[i]) + "\n";
  return out;
}

GbtFit train_boosted(const GbtConfig& config, const Eigen::MatrixXd& train_x, std::span<const std::uint8_t> train_y,
                     const Eigen::MatrixXd& val_x, std::span<const std::uint8_t> val_y) {
  config.validate();
  const auto n = static_cast<std::size_t>(train_x.rows());
  if (n != train_y.size() || static_cast<std::size_t>(val_x.rows()) != val_y.size())
    throw ShapeError("gbt: rows and labels differ");
  if (val_x.cols() != train_x.cols()) throw ShapeError("gbt: train and validation widths differ");
  if (n > std::numeric_limits<std::uint32_t>::max()) throw DataError("gbt", "too many training rows");
  const auto pos = static_cast<std::size_t>(std::count(train_y.begin(), train_y.end(), 1));
  if (pos == 0 || pos == n) throw DataError("training labels", "both classes are required");
  const auto val_pos = static_cast<std::size_t>(std::count(val_y.begin(), val_y.end(), 1));
  if (val_pos == 0 || val_pos == val_y.size()) throw DataError("validation labels", "both classes are required");

  GbtFit fit;
  GbtModel& model = fit.model;
  model.config = config;
  model.n_features = train_x.cols();
  switch (config.alpha_target) {
    case AlphaTarget::kPositive: model.weighted_label = 1; break;
    case AlphaTarget::kNegative: model.weighted_label = 0; break;
    case AlphaTarget::kMinority: model.weighted_label = 2 * pos < n ? 1 : 0; break;
  }
  // Start from the constant that minimises the weighted loss, not the raw
  // log-odds; otherwise a short early-stopped run keeps the unweighted prior.
  const double w_pos = static_cast<double>(pos) * sample_weight(1, model.weighted_label, config.alpha);
  const double w_neg = static_cast<double>(n - pos) * sample_weight(0, model.weighted_label, config.alpha);
  model.base_score = std::log(w_pos / w_neg);

  const auto d = static_cast<std::size_t>(train_x.cols());
  std::vector<std::vector<std::uint32_t>> presorted(d);
  for (std::size_t c = 0; c < d; ++c) {
    auto& idx = presorted[c];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::uint32_t{0});
    const auto col = static_cast<Eigen::Index>(c);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return train_x(a, col) < train_x(b, col); });
  }

  Rng rng(config.seed);
  std::vector<double> margin(n, model.base_score), val_margin(static_cast<std::size_t>(val_x.rows()), model.base_score);
  std::vector<double> g(n), h(n);
  const TreeParams params{config.max_depth, config.lambda, config.gamma, config.min_child_weight};
  EarlyStopper stopper(config.early_stopping_rounds, config.min_delta);

  for (int round = 0; round < config.rounds; ++round) {
    const auto rows = sample_indices(n, config.subsample, rng);
    const auto cols = sample_indices(d, config.colsample, rng);
    for (auto r : rows) {
      const double w = sample_weight(train_y[r], model.weighted_label, config.alpha);
      const double p = sigmoid(margin[r]);
      g[r] = w * (p - train_y[r]);
      h[r] = w * p * (1 - p);
    }
    Tree tree = grow(train_x, g, h, rows, cols, &presorted, params);
    for (auto& node : tree.nodes) node.value *= config.learning_rate;

    double loss = 0;
    for (std::size_t r = 0; r < n; ++r) {
      margin[r] += tree_value(tree, train_x, static_cast<Eigen::Index>(r));
      loss += sample_weight(train_y[r], model.weighted_label, config.alpha) *
              (train_y[r] ? -log_sigmoid(margin[r]) : -log_sigmoid(-margin[r]));
    }
    for (std::size_t r = 0; r < val_margin.size(); ++r) {
      val_margin[r] += tree_value(tree, val_x, static_cast<Eigen::Index>(r));
    }
    model.trees.push_back(std::move(tree));
    const double val_auc = roc_auc(val_margin, val_y);
    fit.history.train_loss.push_back(loss / static_cast<double>(n));
    fit.history.val_auc.push_back(val_auc);
    if (stopper.update(val_auc)) break;
  }
  model.best_iteration = stopper.best_step();
  return fit;
}

double predict_margin_row(const GbtModel& model, std::span<const double> row) {
  if (static_cast<Eigen::Index>(row.size()) != model.n_features)
    throw ShapeError("gbt model expects " + std::to_string(model.n_features) + " columns, got " + std::to_string(row.size()));
  double m = model.base_score;
  const auto used = std::min<std::size_t>(model.trees.size(), static_cast<std::size_t>(model.best_iteration));
  for (std::size_t t = 0; t < used; ++t) m += model.trees[t].predict(row);
  return m;
}

double predict_proba_row(const GbtModel& model, std::span<const double> row) {
  return std::clamp(sigmoid(predict_margin_row(model, row)), kProbabilityFloor, 1 - kProbabilityFloor);
}

Eigen::VectorXd predict_proba(const GbtModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.n_features)
    throw ShapeError("gbt model expects " + std::to_string(model.n_features) + " columns, got " + std::to_string(x.cols()));
  Eigen::VectorXd out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    out(i) = predict_proba_row(model, row);
  }
  return out;
}

std::string GbtModel::dump() const {
  std::string out;
  for (std::size_t t = 0; t < trees.size(); ++t) {
    out += "booster[" + std::to_string(t) + "]" + (static_cast<int>(t) < best_iteration ? "" : " (unused)") + "\n";
    out += format_node(trees[t], 0, 0, feature_names);
  }
  return out;
}

std::string alpha_target_name(AlphaTarget t) {
  switch (t) {
    case AlphaTarget::kPositive: return "positive";
    case AlphaTarget::kNegative: return "negative";
    case AlphaTarget::kMinority: return "minority";
  }
  return "positive";
}

AlphaTarget parse_alpha_target(const std::string& name) {
  if (name == "positive") return AlphaTarget::kPositive;
  if (name == "negative") return AlphaTarget::kNegative;
  if (name == "minority") return AlphaTarget::kMinority;
  throw ConfigError("unknown alpha target '" + name + "' (expected positive, negative or minority)");
}

void GbtModel::write(ByteWriter& w) const {
  w.i32(config.rounds);
  w.f64(config.learning_rate);
  w.i32(config.max_depth);
  w.f64(config.subsample);
  w.f64(config.colsample);
  w.i32(config.early_stopping_rounds);
  w.f64(config.min_delta);
  w.f64(config.alpha);
  w.u8(static_cast<std::uint8_t>(config.alpha_target));
  w.f64(config.lambda);
  w.f64(config.gamma);
  w.f64(config.min_child_weight);
  w.f64(config.validation_fraction);
  w.u64(config.seed);

  w.f64(base_score);
  w.i32(best_iteration);
  w.u8(weighted_label);
  w.u64(static_cast<std::uint64_t>(n_features));
  w.strs(feature_names);
  w.u32(static_cast<std::uint32_t>(trees.size()));
  for (const auto& tree : trees) {
    w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      const auto& node = tree.nodes[id];
      w.u32(static_cast<std::uint32_t>(id));
      w.i32(node.feature);
      w.f64(node.threshold);
      w.i32(node.left);
      w.i32(node.right);
      w.f64(node.value);
      w.f64(node.gain);
      w.f64(node.cover);
    }
  }
}

GbtModel GbtModel::read(ByteReader& r) {
  GbtModel m;
  auto& c = m.config;
  c.rounds = r.i32();
  c.learning_rate = r.f64();
  c.max_depth = r.i32();
  c.subsample = r.f64();
  c.colsample = r.f64();
  c.early_stopping_rounds = r.i32();
  c.min_delta = r.f64();
  c.alpha = r.f64();
  const auto target = r.u8();
  if (target > 2) throw FormatError("gbt: unknown alpha target tag");
  c.alpha_target = static_cast<AlphaTarget>(target);
  c.lambda = r.f64();
  c.gamma = r.f64();
  c.min_child_weight = r.f64();
  c.validation_fraction = r.f64();
  c.seed = r.u64();

  m.base_score = r.f64();
  m.best_iteration = r.i32();
  m.weighted_label = r.u8();
  m.n_features = static_cast<Eigen::Index>(r.u64());
  m.feature_names = r.strs();
  const auto count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    Tree tree;
    const auto nodes = r.u32();
    if (nodes == 0 || nodes > r.remaining()) throw FormatError("gbt: implausible node count");
    for (std::uint32_t id = 0; id < nodes; ++id) {
      if (r.u32() != id) throw FormatError("gbt: node table out of order");
      TreeNode node;
      node.feature = r.i32();
      node.threshold = r.f64();
      node.left = r.i32();
      node.right = r.i32();
      node.value = r.f64();
      node.gain = r.f64();
      node.cover = r.f64();
      tree.nodes.push_back(node);
    }
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      const auto& node = tree.nodes[id];
      if (node.feature < 0) {
        if (!std::isfinite(node.value)) throw FormatError("gbt: non-finite leaf weight");
        continue;
      }
      if (node.feature >= m.n_features || node.left <= static_cast<int>(id) || node.right <= static_cast<int>(id) ||
          static_cast<std::uint32_t>(node.left) >= nodes || static_cast<std::uint32_t>(node.right) >= nodes)
        throw FormatError("gbt: node references out of range");
    }
    m.trees.push_back(std::move(tree));
  }
  if (m.best_iteration < 0 || static_cast<std::size_t>(m.best_iteration) > m.trees.size())
    throw FormatError("gbt: best iteration exceeds tree count");
  return m;
}

}  // namespace vbac
