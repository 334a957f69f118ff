#include "vbac/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "vbac/errors.hpp"
#include "vbac/util.hpp"

namespace vbac {

namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Walks unique-score groups from the top; calls visit(threshold, tp, fp).
template <typename Visit>
void walk_thresholds(std::span<const double> scores, std::span<const std::uint8_t> labels,
                     Visit&& visit) {
  const auto order = descending(scores);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    visit(t, tp, fp);
  }
}

double f1_from(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double safe_ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  const auto neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("roc_curve", "both classes must be present");
  std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  walk_thresholds(scores, labels, [&](double t, std::size_t tp, std::size_t fp) {
    curve.push_back({safe_ratio(fp, neg), safe_ratio(tp, pos), t});
  });
  return curve;
}

double auc(std::span<const RocPoint> curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2;
  return area;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return auc(roc_curve(scores, labels));
}

PrCurve pr_curve_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  if (pos == 0) throw DataError("pr_curve", "no positive labels");
  PrCurve curve{{}, 0.0};
  double last_recall = 0;
  walk_thresholds(scores, labels, [&](double t, std::size_t tp, std::size_t fp) {
    const double recall = safe_ratio(tp, pos);
    const double precision = safe_ratio(tp, tp + fp);
    curve.area += (recall - last_recall) * precision;
    last_recall = recall;
    curve.points.push_back({recall, precision, t});
  });
  return curve;
}

Confusion confusion_at_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                 double threshold) {
  check_inputs(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i])
      (predicted ? c.tp : c.fn)++;
    else
      (predicted ? c.fp : c.tn)++;
  }
  return c;
}

ThresholdChoice optimal_f1_threshold(std::span<const double> scores,
                                     std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  if (pos == 0) throw DataError("optimal_f1_threshold", "no positive labels");
  ThresholdChoice best{0.0, -1.0};
  // Descending walk, so ">=" leaves the lowest threshold among ties.
  walk_thresholds(scores, labels, [&](double t, std::size_t tp, std::size_t fp) {
    const double f1 = f1_from(tp, fp, pos - tp);
    if (f1 >= best.f1) best = {t, f1};
  });
  return best;
}

EvalReport classification_report(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                 double threshold) {
  EvalReport r;
  r.threshold = threshold;
  r.confusion = confusion_at_threshold(scores, labels, threshold);
  const auto& c = r.confusion;
  r.class1 = {safe_ratio(c.tp, c.tp + c.fp), safe_ratio(c.tp, c.tp + c.fn), f1_from(c.tp, c.fp, c.fn),
              c.tp + c.fn};
  r.class0 = {safe_ratio(c.tn, c.tn + c.fn), safe_ratio(c.tn, c.tn + c.fp), f1_from(c.tn, c.fn, c.fp),
              c.tn + c.fp};
  const double n = static_cast<double>(c.total());
  r.weighted_f1 = n > 0 ? (static_cast<double>(r.class0.support) * r.class0.f1 +
                           static_cast<double>(r.class1.support) * r.class1.f1) / n
                        : 0.0;
  r.accuracy = safe_ratio(c.tp + c.tn, c.total());
  const bool both = r.class0.support > 0 && r.class1.support > 0;
  r.roc_auc = both ? roc_auc(scores, labels) : std::numeric_limits<double>::quiet_NaN();
  r.pr_auc = r.class1.support > 0 ? pr_curve_auc(scores, labels).area
                                  : std::numeric_limits<double>::quiet_NaN();
  return r;
}

namespace {

nlohmann::json class_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

ClassMetrics class_from(const nlohmann::json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>(),
          j.at("support").get<std::size_t>()};
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = n();
  j["roc_auc"] = roc_auc;
  j["pr_auc"] = pr_auc;
  j["threshold"] = threshold;
  j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp}, {"tn", confusion.tn}, {"fn", confusion.fn}};
  j["class_0"] = class_json(class0);
  j["class_1"] = class_json(class1);
  j["weighted_f1"] = weighted_f1;
  j["accuracy"] = accuracy;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.roc_auc = j.at("roc_auc").get<double>();
    r.pr_auc = j.at("pr_auc").get<double>();
    r.threshold = j.at("threshold").get<double>();
    const auto& c = j.at("confusion");
    r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                   c.at("tn").get<std::size_t>(), c.at("fn").get<std::size_t>()};
    r.class0 = class_from(j.at("class_0"));
    r.class1 = class_from(j.at("class_1"));
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string roc_to_csv(std::span<const RocPoint> curve) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : curve)
    out += format_double(p.fpr) + "," + format_double(p.tpr) + "," + format_double(p.threshold) + "\n";
  return out;
}

std::string pr_to_csv(const PrCurve& curve) {
  std::string out = "recall,precision,threshold\n";
  for (const auto& p : curve.points)
    out += format_double(p.recall) + "," + format_double(p.precision) + "," +
           format_double(p.threshold) + "\n";
  return out;
}

}  // namespace vbac
