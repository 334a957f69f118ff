#pragma once

// Feed-forward classifier: [Dense -> BatchNorm -> LeakyReLU -> Dropout] x k
// followed by a sigmoid unit, trained with class-weighted cross-entropy and
// Adam, early-stopped on validation AUC.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vbac/features.hpp"
#include "vbac/util.hpp"

namespace vbac {

struct MlpConfig {
  std::vector<int> hidden{128, 64, 32};
  std::vector<double> dropout{0.4, 0.3, 0.0};
  double leaky_slope = 0.3;
  double l2 = 1e-4;  // on hidden-layer kernels
  double learning_rate = 1e-4;
  int batch_size = 256;
  int max_epochs = 60;
  int patience = 5;
  double min_delta = 1e-5;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

struct HiddenLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  double dropout = 0.0;
};

struct MlpModel {
  std::vector<HiddenLayer> hidden;
  Eigen::VectorXd out_weight;
  double out_bias = 0.0;
  double leaky_slope = 0.3;
  double bn_epsilon = 1e-5;

  Eigen::Index input_size() const { return hidden.empty() ? out_weight.size() : hidden.front().weight.cols(); }

  void write(ByteWriter& w) const;
  static MlpModel read(ByteReader& r);
};

// He-normal kernels, zero biases, unit gamma, zero beta.
MlpModel init_mlp(Eigen::Index input_size, const MlpConfig& config, Rng& rng);

// Inverted-dropout multipliers (0 or 1/(1-rate)) per hidden layer, units x batch.
struct DropoutMasks {
  std::vector<Eigen::MatrixXd> scale;
};
DropoutMasks sample_dropout(const MlpModel& model, Eigen::Index batch, Rng& rng);
DropoutMasks no_dropout(const MlpModel& model, Eigen::Index batch);

// Activations kept by a training-mode pass; matrices are units x batch.
struct ForwardCache {
  struct Layer {
    Eigen::MatrixXd input;
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
    Eigen::VectorXd inv_std;
    Eigen::MatrixXd xhat;
    Eigen::MatrixXd pre_activation;  // gamma * xhat + beta
    Eigen::MatrixXd mask;
  };
  std::vector<Layer> layers;
  Eigen::MatrixXd last;  // input to the output unit
  Eigen::VectorXd logits;
  bool ready = false;
};

// Training mode: batch statistics and the given dropout masks. `x` is
// batch x features. Does not touch running statistics.
Eigen::VectorXd forward_train(const MlpModel& model, const Eigen::MatrixXd& x, const DropoutMasks& masks,
                              ForwardCache& cache);

enum class Mode { kTrain, kInfer };

// kInfer uses running statistics and no dropout; kTrain draws masks from
// `rng` (required when any layer has dropout).
Eigen::VectorXd forward(const MlpModel& model, const Eigen::MatrixXd& x, Mode mode, Rng* rng = nullptr);

// Moves running statistics toward the cached batch statistics.
void update_running_stats(MlpModel& model, const ForwardCache& cache, double momentum);

// Mean of -w_y [y ln p + (1-y) ln(1-p)], p clamped away from 0 and 1.
double weighted_bce(std::span<const double> probabilities, std::span<const std::uint8_t> labels,
                    const ClassWeights& weights);

// l2 * sum of squared hidden kernel entries.
double l2_penalty(const MlpModel& model, double l2);

// Exact objective of a cached training pass, computed from the logits.
double training_loss(const MlpModel& model, const ForwardCache& cache, std::span<const std::uint8_t> labels,
                     const ClassWeights& weights, double l2);

struct MlpGradients {
  struct Layer {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
    Eigen::VectorXd gamma;
    Eigen::VectorXd beta;
  };
  std::vector<Layer> hidden;
  Eigen::VectorXd out_weight;
  double out_bias = 0.0;
};

MlpGradients backward(const MlpModel& model, const ForwardCache& cache, std::span<const std::uint8_t> labels,
                      const ClassWeights& weights, double l2);

// Trainable parameters and gradients as flat views, in matching order.
std::vector<std::span<double>> parameter_views(MlpModel& model);
std::vector<std::span<const double>> gradient_views(const MlpGradients& grads);

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-7)
      : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  double train_loss;
  double val_loss;
  double train_auc;
  double val_auc;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based
  bool stopped_early = false;

  std::string to_csv() const;  // epoch,train_loss,val_loss,train_auc,val_auc
};

struct MlpFit {
  MlpModel model;
  TrainHistory history;
};

// Class weights default to the balanced weights of the training labels.
MlpFit train_mlp(const MlpConfig& config, const Eigen::MatrixXd& train_x, std::span<const std::uint8_t> train_y,
                 const Eigen::MatrixXd& val_x, std::span<const std::uint8_t> val_y,
                 std::optional<ClassWeights> weights = std::nullopt);

// Inference mode, row by row; clamped to [1e-12, 1 - 1e-12].
Eigen::VectorXd predict_proba(const MlpModel& model, const Eigen::MatrixXd& x);
double predict_proba_row(const MlpModel& model, std::span<const double> row);

}  // namespace vbac
