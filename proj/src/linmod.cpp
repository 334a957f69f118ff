#include "vbac/linmod.hpp"

#include <algorithm>
#include <cmath>

#include "vbac/errors.hpp"
#include "vbac/eval.hpp"
#include "vbac/stats.hpp"
#include "vbac/util.hpp"

namespace vbac {

namespace {

constexpr double kProbabilityFloor = 1e-12;

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a.col(0).setOnes();
  a.rightCols(x.cols()) = x;
  return a;
}

// Penalised log-likelihood: sum y log p + (1-y) log(1-p) - l2/2 |slopes|^2.
double penalised_ll(const Eigen::MatrixXd& a, std::span<const std::uint8_t> y,
                    const Eigen::VectorXd& beta, double l2) {
  const Eigen::VectorXd eta = a * beta;
  double ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    ll += y[static_cast<std::size_t>(i)] ? log_sigmoid(eta(i)) : log_sigmoid(-eta(i));
  return ll - 0.5 * l2 * beta.tail(beta.size() - 1).squaredNorm();
}

Eigen::VectorXd gradient(const Eigen::MatrixXd& a, std::span<const std::uint8_t> y,
                         const Eigen::VectorXd& beta, double l2) {
  const Eigen::VectorXd eta = a * beta;
  Eigen::VectorXd resid(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    resid(i) = static_cast<double>(y[static_cast<std::size_t>(i)]) - sigmoid(eta(i));
  Eigen::VectorXd g = a.transpose() * resid;
  g.tail(g.size() - 1) -= l2 * beta.tail(beta.size() - 1);
  return g;
}

Eigen::MatrixXd information(const Eigen::MatrixXd& a, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = a * beta;
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = sigmoid(eta(i));
    w(i) = p * (1 - p);
  }
  const Eigen::MatrixXd aw = a.array().colwise() * w.array();
  return a.transpose() * aw;
}

}  // namespace

LogisticModel fit_logistic(const Eigen::MatrixXd& x, std::span<const std::uint8_t> y,
                           const LogisticConfig& config) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ShapeError("X rows and labels differ");
  if (y.empty()) throw DataError("fit_logistic", "no rows");
  if (!x.allFinite()) throw DataError("fit_logistic", "design matrix has non-finite entries");
  for (auto v : y)
    if (v > 1) throw DataError("fit_logistic", "labels must be 0 or 1");
  if (config.l2 < 0) throw ConfigError("l2 penalty must be >= 0");

  const Eigen::MatrixXd a = with_intercept(x);
  const Eigen::Index p = a.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  // Start the intercept at the empirical log-odds; the slopes at zero.
  const double ybar = std::count(y.begin(), y.end(), 1) / static_cast<double>(y.size());
  if (ybar > 0 && ybar < 1) beta(0) = std::log(ybar / (1 - ybar));

  LogisticModel model;
  model.l2 = config.l2;
  double ll = penalised_ll(a, y, beta, config.l2);
  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    const Eigen::VectorXd g = gradient(a, y, beta, config.l2);
    if (g.lpNorm<Eigen::Infinity>() <= config.gradient_tolerance) {
      model.converged = true;
      break;
    }
    Eigen::MatrixXd h = information(a, beta);
    h.diagonal().tail(p - 1).array() += config.l2;
    Eigen::VectorXd step = h.ldlt().solve(g);
    if (!step.allFinite() || (h * step - g).norm() > 1e-6 * (1 + g.norm()))
      step = h.completeOrthogonalDecomposition().solve(g);

    double scale = 1.0;
    Eigen::VectorXd candidate = beta + step;
    double candidate_ll = penalised_ll(a, y, candidate, config.l2);
    while (!(candidate_ll >= ll) && scale > 1e-10) {
      scale /= 2;
      candidate = beta + scale * step;
      candidate_ll = penalised_ll(a, y, candidate, config.l2);
    }
    model.iterations = iter;
    if (!(candidate_ll >= ll)) break;  // no ascent direction left
    const double change = std::abs(candidate_ll - ll) / (std::abs(ll) + 1e-300);
    beta = candidate;
    ll = candidate_ll;
    if (change <= config.relative_ll_tolerance) {
      model.converged = true;
      break;
    }
  }
  if (!model.converged && gradient(a, y, beta, config.l2).lpNorm<Eigen::Infinity>() <= config.gradient_tolerance)
    model.converged = true;

  model.intercept = beta(0);
  model.coefficients = beta.tail(p - 1);
  model.neg_log_likelihood = -ll;
  if (config.l2 == 0) {
    const Eigen::VectorXd eta = a * beta;
    // Under separation the gradient test passes once |eta| ~ 18, so the
    // flag has to trip well before the probabilities saturate.
    model.separation_warning = eta.lpNorm<Eigen::Infinity>() > 15.0;
  }
  return model;
}

LogisticModel fit_logistic(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                           const LogisticConfig& config) {
  auto model = fit_logistic(x.values, y, config);
  model.feature_names = x.column_names();
  return model;
}

double predict_proba_row(const LogisticModel& model, std::span<const double> row) {
  if (static_cast<Eigen::Index>(row.size()) != model.features())
    throw ShapeError("logistic model expects " + std::to_string(model.features()) + " columns, got " +
                     std::to_string(row.size()));
  double eta = model.intercept;
  for (std::size_t j = 0; j < row.size(); ++j) eta += model.coefficients(static_cast<Eigen::Index>(j)) * row[j];
  return std::clamp(sigmoid(eta), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

Eigen::VectorXd predict_proba(const LogisticModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.features())
    throw ShapeError("logistic model expects " + std::to_string(model.features()) + " columns, got " +
                     std::to_string(x.cols()));
  Eigen::VectorXd out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
    out(i) = predict_proba_row(model, row);
  }
  return out;
}

Eigen::VectorXd log_likelihood_gradient(const LogisticModel& model, const Eigen::MatrixXd& x,
                                        std::span<const std::uint8_t> y) {
  Eigen::VectorXd beta(model.features() + 1);
  beta(0) = model.intercept;
  beta.tail(model.features()) = model.coefficients;
  return gradient(with_intercept(x), y, beta, model.l2);
}

CoefficientReport wald_report(const LogisticModel& model, const Eigen::MatrixXd& x) {
  if (model.l2 != 0) throw ConfigError("Wald standard errors are only reported for unpenalised fits");
  if (!model.converged) throw ConfigError("Wald report requires a converged model");
  if (x.cols() != model.features()) throw ShapeError("Wald report: column mismatch");

  std::vector<std::string> names{"(intercept)"};
  for (Eigen::Index j = 0; j < model.features(); ++j)
    names.push_back(static_cast<std::size_t>(j) < model.feature_names.size()
                        ? model.feature_names[static_cast<std::size_t>(j)]
                        : "x" + std::to_string(j));

  const Eigen::MatrixXd a = with_intercept(x);
  Eigen::VectorXd beta(a.cols());
  beta(0) = model.intercept;
  beta.tail(model.features()) = model.coefficients;

  // Rank check on sqrt(W) A so dependent columns can be named.
  const Eigen::VectorXd eta = a * beta;
  Eigen::VectorXd sqrt_w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = sigmoid(eta(i));
    sqrt_w(i) = std::sqrt(p * (1 - p));
  }
  const Eigen::MatrixXd scaled = a.array().colwise() * sqrt_w.array();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-10);
  if (qr.rank() < a.cols()) {
    std::vector<std::string> dependent;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < a.cols(); ++k)
      dependent.push_back(names[static_cast<std::size_t>(perm(k))]);
    std::sort(dependent.begin(), dependent.end());
    throw SingularMatrixError(std::move(dependent));
  }
  const Eigen::MatrixXd info = scaled.transpose() * scaled;
  const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(a.cols(), a.cols()));

  CoefficientReport report;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    CoefficientRow row;
    row.feature = names[static_cast<std::size_t>(j)];
    row.estimate = beta(j);
    row.se = std::sqrt(cov(j, j));
    row.ci_low = row.estimate - 1.96 * row.se;
    row.ci_high = row.estimate + 1.96 * row.se;
    row.z = row.estimate / row.se;
    row.p = normal_two_sided_p(row.z);
    row.significant = row.p < 0.05;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string CoefficientReport::to_csv() const {
  std::string out = "feature,estimate,se,ci_low,ci_high,p,significant\n";
  for (const auto& r : rows)
    out += csv_escape(r.feature) + "," + format_double(r.estimate) + "," + format_double(r.se) + "," +
           format_double(r.ci_low) + "," + format_double(r.ci_high) + "," + format_double(r.p) + "," +
           (r.significant ? "true" : "false") + "\n";
  return out;
}

std::vector<CoefficientRow> rank_coefficients(const CoefficientReport& report) {
  std::vector<CoefficientRow> ranked;
  for (const auto& r : report.rows)
    if (r.feature != "(intercept)") ranked.push_back(r);
  std::stable_sort(ranked.begin(), ranked.end(), [](const CoefficientRow& a, const CoefficientRow& b) {
    const double ma = std::abs(a.estimate), mb = std::abs(b.estimate);
    if (ma != mb) return ma > mb;
    return a.feature < b.feature;
  });
  return ranked;
}

CvResult cross_validate_auc(const LabeledCohort& cohort, const PreprocessConfig& preprocess, int k,
                            std::uint64_t seed, const LogisticConfig& config) {
  const auto folds = stratified_kfold(cohort.labels, k, seed);
  CvResult result;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    try {
      std::vector<bool> held(cohort.size(), false);
      for (auto i : folds[f]) held[i] = true;
      std::vector<std::size_t> train;
      for (std::size_t i = 0; i < cohort.size(); ++i)
        if (!held[i]) train.push_back(i);

      const auto prep = Preprocessor::fit(cohort.records, train, preprocess);
      const FeatureMatrix all = prep.transform(cohort.records);
      const FeatureMatrix train_x = all.select_rows(train);
      const FeatureMatrix test_x = all.select_rows(folds[f]);
      std::vector<std::uint8_t> train_y, test_y;
      for (auto i : train) train_y.push_back(cohort.labels[i]);
      for (auto i : folds[f]) test_y.push_back(cohort.labels[i]);

      const auto model = fit_logistic(train_x, train_y, config);
      const Eigen::VectorXd scores = predict_proba(model, test_x.values);
      result.fold_auc.push_back(
          roc_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), test_y));
    } catch (const Error& e) {
      throw Error("cross-validation fold " + std::to_string(f) + ": " + e.what());
    }
  }
  double sum = 0;
  for (double a : result.fold_auc) sum += a;
  result.mean_auc = sum / static_cast<double>(result.fold_auc.size());
  return result;
}

}  // namespace vbac
