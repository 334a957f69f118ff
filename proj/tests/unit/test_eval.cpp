#include <doctest.h>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "vbac/errors.hpp"
#include "vbac/eval.hpp"

using namespace vbac;

namespace {

double pairwise_auc(std::span<const double> s, std::span<const std::uint8_t> y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

}  // namespace

TEST_CASE("AUC worked examples") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  CHECK(roc_auc(s, y) == doctest::Approx(0.75));

  const auto curve = roc_curve(s, y);
  CHECK(curve.front().fpr == 0);
  CHECK(curve.front().tpr == 0);
  CHECK(std::isinf(curve.front().threshold));
  CHECK(curve.back().fpr == 1);
  CHECK(curve.back().tpr == 1);

  const std::vector<double> tied{0.5, 0.5, 0.5, 0.5};
  CHECK(roc_auc(tied, y) == 0.5);
  CHECK(roc_curve(tied, y).size() == 2);

  const std::vector<double> perfect{0.1, 0.2, 0.8, 0.9};
  CHECK(roc_auc(perfect, y) == 1.0);
  const std::vector<double> reversed{0.9, 0.8, 0.2, 0.1};
  CHECK(roc_auc(reversed, y) == 0.0);

  CHECK_THROWS_AS(roc_auc(s, std::vector<std::uint8_t>{1, 1, 1, 1}), DataError);
  CHECK_THROWS_AS(roc_auc(s, std::vector<std::uint8_t>{1, 0}), ShapeError);
}

TEST_CASE("AUC equals the pairwise probability and is rank-invariant") {
  Rng rng(31);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(60);
    std::vector<std::uint8_t> y(60);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = coarse(rng) / 10.0;
      y[i] = static_cast<std::uint8_t>(i % 3 == 0 ? 1 : coarse(rng) > 6);
    }
    const double a = roc_auc(s, y);
    CHECK(a == doctest::Approx(pairwise_auc(s, y)).epsilon(1e-12));
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3 * s[i]) - 7;
    CHECK(roc_auc(t, y) == doctest::Approx(a).epsilon(1e-12));
    std::vector<std::uint8_t> flipped(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
    CHECK(roc_auc(s, flipped) == doctest::Approx(1 - a).epsilon(1e-12));
  }
}

TEST_CASE("PR curve") {
  const std::vector<std::uint8_t> y{1, 0, 1, 1, 0, 0, 0, 1};
  const std::vector<double> constant(8, 0.3);
  CHECK(pr_curve_auc(constant, y).area == doctest::Approx(0.5));

  // step-wise average precision by direct enumeration
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2};
  double ap = 0, tp = 0;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (y[k]) {
      tp += 1;
      ap += (tp / static_cast<double>(k + 1)) / 4.0;
    }
  const auto pr = pr_curve_auc(s, y);
  CHECK(pr.area == doctest::Approx(ap));
  for (std::size_t i = 1; i < pr.points.size(); ++i) CHECK(pr.points[i].threshold < pr.points[i - 1].threshold);
  CHECK(pr_to_csv(pr).rfind("recall,precision,threshold\n", 0) == 0);
  CHECK(roc_to_csv(roc_curve(s, y)).rfind("fpr,tpr,threshold\n", 0) == 0);
}

TEST_CASE("confusion counts at and around a threshold") {
  const std::vector<double> s{0.2, 0.5, 0.5, 0.9};
  const std::vector<std::uint8_t> y{0, 1, 0, 1};
  const auto at = confusion_at_threshold(s, y, 0.5);
  CHECK(at == Confusion{2, 1, 1, 0});
  CHECK(confusion_at_threshold(s, y, std::nextafter(0.5, 1.0)) == Confusion{1, 0, 2, 1});
  CHECK(confusion_at_threshold(s, y, 0.0).tp == 2);
  CHECK(confusion_at_threshold(s, y, 0.0).fp == 2);
  CHECK(confusion_at_threshold(s, y, 1.0).total() == 4);
}

TEST_CASE("F1-optimal threshold") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  const auto c = optimal_f1_threshold(s, y);
  // 0.35 gives tp 2, fp 1: f1 = 0.8; 0.8 gives f1 = 2/3
  CHECK(c.threshold == 0.35);
  CHECK(c.f1 == doctest::Approx(0.8));

  const std::vector<double> sep{0.1, 0.2, 0.7, 0.9};
  const auto perfect = optimal_f1_threshold(sep, y);
  CHECK(perfect.threshold == 0.7);
  CHECK(perfect.f1 == 1.0);

  const std::vector<double> mixed{0.9, 0.1, 0.2, 0.3};
  const std::vector<std::uint8_t> ym{0, 1, 1, 0};
  // 0.1: tp 2 fp 2 -> 0.667; 0.2: tp 1 fp 2 -> 0.4; further thresholds lower
  const auto low = optimal_f1_threshold(mixed, ym);
  CHECK(low.threshold == 0.1);
  CHECK(low.f1 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("classification report is self-consistent") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(400);
  std::vector<std::uint8_t> y(400);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = u(rng) < 0.7;
    s[i] = std::clamp(0.5 + (y[i] ? 0.15 : -0.15) + 0.3 * (u(rng) - 0.5), 0.0, 1.0);
  }
  const auto r = classification_report(s, y, 0.5);
  CHECK(r.n() == 400);
  CHECK(r.class1.support + r.class0.support == 400);
  CHECK(r.confusion == confusion_at_threshold(s, y, 0.5));
  const double tp = static_cast<double>(r.confusion.tp), fp = static_cast<double>(r.confusion.fp),
               fn = static_cast<double>(r.confusion.fn), tn = static_cast<double>(r.confusion.tn);
  CHECK(r.class1.precision == doctest::Approx(tp / (tp + fp)));
  CHECK(r.class1.recall == doctest::Approx(tp / (tp + fn)));
  CHECK(r.class0.recall == doctest::Approx(tn / (tn + fp)));
  CHECK(r.accuracy == doctest::Approx((tp + tn) / 400));
  CHECK(r.weighted_f1 >= std::min(r.class0.f1, r.class1.f1));
  CHECK(r.weighted_f1 <= std::max(r.class0.f1, r.class1.f1));
  CHECK(r.roc_auc == doctest::Approx(roc_auc(s, y)));

  const auto back = EvalReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK(back.confusion == r.confusion);
  const auto j = nlohmann::json::parse(r.to_json());
  for (const char* key : {"roc_auc", "pr_auc", "threshold", "confusion", "class_0", "class_1", "weighted_f1", "accuracy", "n"})
    CHECK(j.contains(key));
}
