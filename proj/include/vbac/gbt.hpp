#pragma once

// Gradient-boosted regression trees on a second-order objective, with an
// alpha-weighted log loss, row/column subsampling and early stopping on
// validation AUC.

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vbac/util.hpp"

namespace vbac {

// Which label the alpha weight multiplies. kMinority resolves to the less
// frequent label in the training set.
enum class AlphaTarget : std::uint8_t { kPositive, kNegative, kMinority };

struct GbtConfig {
  int rounds = 600;
  double learning_rate = 0.01;
  int max_depth = 5;
  double subsample = 0.9;
  double colsample = 0.8;
  int early_stopping_rounds = 10;
  double min_delta = 1e-6;
  double alpha = 2.5;
  AlphaTarget alpha_target = AlphaTarget::kPositive;
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const GbtConfig&, const GbtConfig&) = default;
};

struct GradHess {
  double g;
  double h;
};

// L(z) = -[alpha y ln p + (1 - y) ln(1 - p)], p = sigmoid(z).
GradHess weighted_logloss_grad_hess(double margin, std::uint8_t label, double alpha);
double weighted_logloss(double margin, std::uint8_t label, double alpha);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // rows with x < threshold go left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf weight
  double gain = 0.0;   // loss reduction of the split, before gamma
  double cover = 0.0;  // hessian sum
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> row) const;
  int depth() const;
  int leaves() const;
  friend bool operator==(const Tree&, const Tree&) = default;
};

struct TreeParams {
  int max_depth = 5;
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
};

// Exact greedy depth-wise growth over `rows` using only `columns`. Leaf
// weights are -G/(H + lambda), without any learning-rate scaling.
Tree fit_tree(const Eigen::MatrixXd& x, std::span<const double> g, std::span<const double> h,
              std::span<const std::size_t> rows, std::span<const std::size_t> columns, const TreeParams& params);

// Convenience overload: all rows, all columns.
Tree fit_tree(const Eigen::MatrixXd& x, std::span<const double> g, std::span<const double> h,
              const TreeParams& params);

struct GbtHistory {
  std::vector<double> train_loss;  // weighted objective after each round
  std::vector<double> val_auc;

  std::string to_csv() const;  // round,train_loss,val_auc
};

struct GbtModel {
  double base_score = 0.0;
  std::vector<Tree> trees;  // leaf values already include the learning rate
  GbtConfig config;
  int best_iteration = 0;  // number of leading trees used for prediction
  std::uint8_t weighted_label = 1;
  Eigen::Index n_features = 0;
  std::vector<std::string> feature_names;

  std::string dump() const;  // one node per line, depth-indented
  void write(ByteWriter& w) const;
  static GbtModel read(ByteReader& r);
};

struct GbtFit {
  GbtModel model;
  GbtHistory history;
};

GbtFit train_boosted(const GbtConfig& config, const Eigen::MatrixXd& train_x, std::span<const std::uint8_t> train_y,
                     const Eigen::MatrixXd& val_x, std::span<const std::uint8_t> val_y);

double predict_margin_row(const GbtModel& model, std::span<const double> row);
double predict_proba_row(const GbtModel& model, std::span<const double> row);
Eigen::VectorXd predict_proba(const GbtModel& model, const Eigen::MatrixXd& x);

std::string alpha_target_name(AlphaTarget t);
AlphaTarget parse_alpha_target(const std::string& name);

}  // namespace vbac
