#pragma once

// Ranking and threshold metrics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vbac {

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;  // +inf for the (0,0) anchor
};

// Thresholds at unique scores, descending, starting at (0,0) and ending at
// (1,1). Equal scores move together.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Trapezoidal area under a ROC polyline.
double auc(std::span<const RocPoint> curve);
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct PrPoint {
  double recall;
  double precision;
  double threshold;
};

struct PrCurve {
  std::vector<PrPoint> points;  // descending thresholds
  double area;                  // average precision (step-wise)
};

PrCurve pr_curve_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Predicts 1 iff score >= threshold.
Confusion confusion_at_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                 double threshold);

struct ThresholdChoice {
  double threshold;
  double f1;
};

// Maximises positive-class F1 over the unique observed scores; ties go to
// the lowest threshold.
ThresholdChoice optimal_f1_threshold(std::span<const double> scores,
                                     std::span<const std::uint8_t> labels);

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;
};

struct EvalReport {
  double roc_auc = 0;
  double pr_auc = 0;
  double threshold = 0.5;
  Confusion confusion;
  ClassMetrics class0;  // repeat cesarean
  ClassMetrics class1;  // VBAC
  double weighted_f1 = 0;
  double accuracy = 0;

  std::size_t n() const { return confusion.total(); }
  // JSON object with the keys documented in README.md.
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

EvalReport classification_report(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                 double threshold);

std::string roc_to_csv(std::span<const RocPoint> curve);   // fpr,tpr,threshold
std::string pr_to_csv(const PrCurve& curve);               // recall,precision,threshold

}  // namespace vbac
