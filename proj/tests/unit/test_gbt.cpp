#include <doctest.h>

#include "helpers.hpp"
#include "vbac/errors.hpp"
#include "vbac/eval.hpp"
#include "vbac/gbt.hpp"

using namespace vbac;

namespace {

struct Data {
  Eigen::MatrixXd x;
  std::vector<std::uint8_t> y;
};

Data noisy(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0, 1);
  Data d{Eigen::MatrixXd(static_cast<Eigen::Index>(n), 3), std::vector<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int j = 0; j < 3; ++j) d.x(r, j) = nd(rng);
    d.y[i] = u(rng) < sigmoid(1.0 + 1.2 * d.x(r, 0) - 0.8 * d.x(r, 1) * d.x(r, 2));
  }
  return d;
}

GbtConfig quick() {
  GbtConfig c;
  c.rounds = 60;
  c.learning_rate = 0.1;
  c.max_depth = 3;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("weighted log loss derivatives") {
  const auto gh = weighted_logloss_grad_hess(0.0, 1, 2.5);
  CHECK(gh.g == doctest::Approx(-1.25));
  CHECK(gh.h == doctest::Approx(0.625));
  const auto neg = weighted_logloss_grad_hess(0.0, 0, 2.5);
  CHECK(neg.g == doctest::Approx(0.5));
  CHECK(neg.h == doctest::Approx(0.25));

  const double eps = 1e-5;
  for (double z : {-3.0, -0.4, 0.0, 1.7, 4.0})
    for (std::uint8_t y : {0, 1})
      for (double a : {1.0, 2.5}) {
        const auto d = weighted_logloss_grad_hess(z, y, a);
        const double g = (weighted_logloss(z + eps, y, a) - weighted_logloss(z - eps, y, a)) / (2 * eps);
        const double gp = weighted_logloss_grad_hess(z + eps, y, a).g;
        const double gm = weighted_logloss_grad_hess(z - eps, y, a).g;
        CHECK(d.g == doctest::Approx(g).epsilon(1e-6));
        CHECK(d.h == doctest::Approx((gp - gm) / (2 * eps)).epsilon(1e-6));
      }
}

TEST_CASE("tree leaves and splits on hand-sized inputs") {
  SUBCASE("no usable split: one leaf at -G/(H+lambda)") {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(2, 1, 3.0);
    const std::vector<double> g{1, 1}, h{1, 1};
    const Tree t = fit_tree(x, g, h, TreeParams{});
    REQUIRE(t.nodes.size() == 1);
    CHECK(t.nodes[0].value == doctest::Approx(-2.0 / 3.0));
    CHECK(t.leaves() == 1);
  }
  SUBCASE("opposite gradients are separated") {
    Eigen::MatrixXd x(2, 1);
    x << 0, 1;
    const std::vector<double> g{1, -1}, h{1, 1};
    TreeParams p;
    p.lambda = 0;
    const Tree t = fit_tree(x, g, h, p);
    REQUIRE(t.nodes.size() == 3);
    CHECK(t.nodes[0].feature == 0);
    CHECK(t.nodes[0].threshold > 0);
    CHECK(t.nodes[0].threshold <= 1);
    CHECK(t.predict(std::vector<double>{0}) == doctest::Approx(-1));
    CHECK(t.predict(std::vector<double>{1}) == doctest::Approx(1));
    CHECK(t.nodes[0].gain > 0);

    p.gamma = 100;
    CHECK(fit_tree(x, g, h, p).nodes.size() == 1);
  }
  SUBCASE("depth limit") {
    const auto d = noisy(300, 2);
    std::vector<double> g(300), h(300, 0.25);
    for (std::size_t i = 0; i < 300; ++i) g[i] = d.y[i] ? -0.5 : 0.5;
    TreeParams p;
    p.max_depth = 2;
    const Tree t = fit_tree(d.x, g, h, p);
    CHECK(t.depth() <= 2);
    CHECK(t.leaves() <= 4);
  }
}

TEST_CASE("Newton boosting by hand reaches the group log-odds") {
  // group A: 3 of 4 positive; group B: 1 of 4
  Eigen::MatrixXd x(8, 1);
  x << 0, 0, 0, 0, 1, 1, 1, 1;
  const std::vector<std::uint8_t> y{1, 1, 1, 0, 1, 0, 0, 0};
  std::vector<double> margin(8, 0.0), g(8), h(8);
  TreeParams p;
  p.lambda = 0;
  p.max_depth = 1;
  p.min_child_weight = 0;
  for (int round = 0; round < 200; ++round) {
    for (std::size_t i = 0; i < 8; ++i) {
      const auto gh = weighted_logloss_grad_hess(margin[i], y[i], 1.0);
      g[i] = gh.g;
      h[i] = gh.h;
    }
    const Tree t = fit_tree(x, g, h, p);
    for (std::size_t i = 0; i < 8; ++i) margin[i] += 0.3 * t.predict(std::vector<double>{x(static_cast<Eigen::Index>(i), 0)});
  }
  CHECK(margin[0] == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  CHECK(margin[7] == doctest::Approx(-std::log(3.0)).epsilon(1e-6));
}

TEST_CASE("boosting: base score, zero learning rate and determinism") {
  const auto tr = noisy(2000, 3), va = noisy(500, 4);
  double pos = 0;
  for (auto v : tr.y) pos += v;
  const double prev = pos / 2000;

  auto cfg = quick();
  cfg.learning_rate = 0;
  cfg.alpha = 1.0;
  const auto flat = train_boosted(cfg, tr.x, tr.y, va.x, va.y);
  CHECK(flat.model.base_score == doctest::Approx(std::log(prev / (1 - prev))));
  const Eigen::VectorXd pf = predict_proba(flat.model, va.x);
  CHECK((pf.array() == pf(0)).all());
  CHECK(pf(0) == doctest::Approx(prev));

  // weighted start: the constant minimising alpha-weighted log loss
  cfg.alpha = 2.5;
  const auto weighted = train_boosted(cfg, tr.x, tr.y, va.x, va.y);
  CHECK(weighted.model.base_score == doctest::Approx(std::log(2.5 * prev / (1 - prev))));
  double dsum = 0;
  for (std::size_t i = 0; i < tr.y.size(); ++i)
    dsum += weighted_logloss_grad_hess(weighted.model.base_score, tr.y[i], 2.5).g;
  CHECK(std::abs(dsum) < 1e-8);

  const auto a = train_boosted(quick(), tr.x, tr.y, va.x, va.y);
  const auto b = train_boosted(quick(), tr.x, tr.y, va.x, va.y);
  CHECK(a.model.trees == b.model.trees);
  CHECK(predict_proba(a.model, va.x) == predict_proba(b.model, va.x));
  const Eigen::VectorXd pa = predict_proba(a.model, va.x);
  CHECK(roc_auc(std::span<const double>(pa.data(), 500), va.y) > 0.7);
  CHECK(a.history.val_auc.size() == a.model.trees.size());
  CHECK(a.model.best_iteration >= 1);
  CHECK(a.history.to_csv().rfind("round,train_loss,val_auc\n", 0) == 0);

  for (std::size_t i = 1; i < a.history.train_loss.size(); ++i)
    CHECK(a.history.train_loss[i] <= a.history.train_loss[i - 1] + 1e-9);

  GbtModel empty = flat.model;
  empty.trees.clear();
  CHECK(predict_proba_row(empty, std::vector<double>{0, 0, 0}) == doctest::Approx(prev));
}

TEST_CASE("alpha on the positive label raises predicted probabilities") {
  const auto tr = noisy(3000, 5), va = noisy(800, 6);
  auto one = quick();
  one.alpha = 1.0;
  one.early_stopping_rounds = 1000;
  auto heavy = one;
  heavy.alpha = 2.5;
  const Eigen::VectorXd p1 = predict_proba(train_boosted(one, tr.x, tr.y, va.x, va.y).model, va.x);
  const Eigen::VectorXd p2 = predict_proba(train_boosted(heavy, tr.x, tr.y, va.x, va.y).model, va.x);
  CHECK(p2.mean() > p1.mean());

  auto minority = heavy;
  minority.alpha_target = AlphaTarget::kMinority;
  const auto m = train_boosted(minority, tr.x, tr.y, va.x, va.y).model;
  CHECK(m.weighted_label == 0);  // positives are the majority here
  CHECK(predict_proba(m, va.x).mean() < p1.mean());
}

TEST_CASE("dump, names and serialisation") {
  const auto tr = noisy(500, 7), va = noisy(200, 8);
  auto fit = train_boosted(quick(), tr.x, tr.y, va.x, va.y);
  fit.model.feature_names = {"bmi", "age", "ga"};
  const std::string dump = fit.model.dump();
  CHECK(dump.rfind("booster[0]", 0) == 0);
  CHECK(dump.find("leaf=") != std::string::npos);
  CHECK(dump.find("[bmi<") != std::string::npos);

  ByteWriter w;
  fit.model.write(w);
  ByteReader r(w.bytes());
  const GbtModel back = GbtModel::read(r);
  CHECK(r.done());
  CHECK(back.trees == fit.model.trees);
  CHECK(back.config == fit.model.config);
  CHECK(back.feature_names == fit.model.feature_names);
  CHECK(predict_proba(back, va.x) == predict_proba(fit.model, va.x));
  CHECK_THROWS_AS(predict_proba_row(back, std::vector<double>{1}), ShapeError);
}

TEST_CASE("alpha target names and config checks") {
  for (auto t : {AlphaTarget::kPositive, AlphaTarget::kNegative, AlphaTarget::kMinority})
    CHECK(parse_alpha_target(alpha_target_name(t)) == t);
  CHECK_THROWS_AS(parse_alpha_target("majority"), ConfigError);
  GbtConfig c;
  c.subsample = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GbtConfig{};
  c.alpha = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(GbtConfig{}.validate());
}
