#pragma once

// Multivariable logistic regression fitted by IRLS / Newton-Raphson.

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vbac/features.hpp"

namespace vbac {

struct LogisticConfig {
  double l2 = 0.0;  // ridge on the slopes, never on the intercept
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  double relative_ll_tolerance = 1e-10;
};

struct LogisticModel {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  std::vector<std::string> feature_names;
  double l2 = 0.0;
  int iterations = 0;
  bool converged = false;
  bool separation_warning = false;
  double neg_log_likelihood = 0.0;

  Eigen::Index features() const { return coefficients.size(); }
};

LogisticModel fit_logistic(const Eigen::MatrixXd& x, std::span<const std::uint8_t> y,
                           const LogisticConfig& config = {});
LogisticModel fit_logistic(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                           const LogisticConfig& config = {});

// 1 / (1 + exp(-(b0 + b.x))), clamped to [1e-12, 1 - 1e-12]; evaluated row by
// row so a single-row call reproduces the batch result bit for bit.
Eigen::VectorXd predict_proba(const LogisticModel& model, const Eigen::MatrixXd& x);
double predict_proba_row(const LogisticModel& model, std::span<const double> row);

// Gradient of the penalised log-likelihood, intercept first.
Eigen::VectorXd log_likelihood_gradient(const LogisticModel& model, const Eigen::MatrixXd& x,
                                        std::span<const std::uint8_t> y);

struct CoefficientRow {
  std::string feature;
  double estimate;
  double se;
  double ci_low;
  double ci_high;
  double z;
  double p;
  bool significant;  // p < 0.05
};

struct CoefficientReport {
  std::vector<CoefficientRow> rows;  // intercept first

  std::string to_csv() const;  // feature,estimate,se,ci_low,ci_high,p,significant
};

// Wald statistics from the inverse observed information (X'WX)^-1.
CoefficientReport wald_report(const LogisticModel& model, const Eigen::MatrixXd& x);

// Descending |estimate|, ties by name; the intercept is excluded.
std::vector<CoefficientRow> rank_coefficients(const CoefficientReport& report);

struct CvResult {
  std::vector<double> fold_auc;
  double mean_auc;
};

// Stratified k-fold AUROC; preprocessing is refitted on each training
// portion.
CvResult cross_validate_auc(const LabeledCohort& cohort, const PreprocessConfig& preprocess, int k,
                            std::uint64_t seed, const LogisticConfig& config = {});

}  // namespace vbac
