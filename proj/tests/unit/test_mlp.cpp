#include <doctest.h>

#include "helpers.hpp"
#include "vbac/early_stop.hpp"
#include "vbac/errors.hpp"
#include "vbac/eval.hpp"
#include "vbac/mlp.hpp"

using namespace vbac;

namespace {

MlpConfig small_config() {
  MlpConfig c;
  c.hidden = {3, 2};
  c.dropout = {0.0, 0.0};
  c.l2 = 1e-3;
  return c;
}

double loss_at(const MlpModel& m, const Eigen::MatrixXd& x, std::span<const std::uint8_t> y, const ClassWeights& w,
               double l2) {
  ForwardCache cache;
  forward_train(m, x, no_dropout(m, x.rows()), cache);
  return training_loss(m, cache, y, w, l2);
}

}  // namespace

TEST_CASE("backprop matches central differences") {
  Rng rng(4);
  const auto cfg = small_config();
  MlpModel m = init_mlp(4, cfg, rng);
  // move BN affine params off their defaults so their gradients are exercised
  std::normal_distribution<double> nd(0, 0.3);
  for (auto& l : m.hidden) {
    for (auto& v : l.gamma) v += nd(rng);
    for (auto& v : l.beta) v += nd(rng);
  }
  m.out_bias = 0.1;
  Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(5, 4, [&] { return nd(rng) * 3; });
  const std::vector<std::uint8_t> y{1, 0, 1, 1, 0};
  const ClassWeights w{1.3, 0.8};

  ForwardCache cache;
  forward_train(m, x, no_dropout(m, 5), cache);
  const auto grads = backward(m, cache, y, w, cfg.l2);
  const auto g = gradient_views(grads);
  auto params = parameter_views(m);
  REQUIRE(params.size() == g.size());

  // Biases in front of batch norm have an exactly zero gradient (the batch
  // mean absorbs them); a ratio against finite-difference noise is
  // meaningless there, so they get an absolute bound instead.
  const std::size_t hidden_blocks = 4 * m.hidden.size();
  const double h = 1e-6;
  double worst = 0, worst_bias = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    REQUIRE(params[b].size() == g[b].size());
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double keep = params[b][i];
      params[b][i] = keep + h;
      const double up = loss_at(m, x, y, w, cfg.l2);
      params[b][i] = keep - h;
      const double down = loss_at(m, x, y, w, cfg.l2);
      params[b][i] = keep;
      const double numeric = (up - down) / (2 * h);
      if (b < hidden_blocks && b % 4 == 1) {
        worst_bias = std::max({worst_bias, std::abs(numeric), std::abs(g[b][i])});
        continue;
      }
      const double denom = std::max({std::abs(numeric), std::abs(g[b][i]), 1e-8});
      worst = std::max(worst, std::abs(numeric - g[b][i]) / denom);
    }
  }
  CHECK(worst < 1e-4);
  CHECK(worst_bias < 1e-9);
}

TEST_CASE("batch norm standardises each unit in training mode") {
  Rng rng(6);
  MlpConfig cfg = small_config();
  cfg.hidden = {7};
  cfg.dropout = {0.0};
  const MlpModel m = init_mlp(3, cfg, rng);
  std::normal_distribution<double> nd(5, 4);
  const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(64, 3, [&] { return nd(rng); });
  ForwardCache cache;
  forward_train(m, x, no_dropout(m, 64), cache);
  const auto& xhat = cache.layers[0].xhat;  // units x batch
  for (Eigen::Index u = 0; u < xhat.rows(); ++u) {
    const double mean = xhat.row(u).mean();
    const double var = (xhat.row(u).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1) < 1e-5);
  }
}

TEST_CASE("dropout masks are inverted and inference is deterministic") {
  Rng rng(2);
  MlpConfig cfg;
  cfg.hidden = {200};
  cfg.dropout = {0.4};
  const MlpModel m = init_mlp(3, cfg, rng);
  const auto masks = sample_dropout(m, 50, rng);
  const auto& s = masks.scale[0];
  double kept = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double v = s.data()[i];
    CHECK((v == 0 || v == doctest::Approx(1 / 0.6)));
    kept += v != 0;
  }
  CHECK(kept / static_cast<double>(s.size()) == doctest::Approx(0.6).epsilon(0.05));

  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 3);
  CHECK(forward(m, x, Mode::kInfer) == forward(m, x, Mode::kInfer));
  const Eigen::VectorXd p = predict_proba(m, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd row = x.row(i).transpose();
    CHECK(p(i) == predict_proba_row(m, std::span<const double>(row.data(), 3)));
  }
}

TEST_CASE("Adam: first step has size lr and zero gradient is a no-op") {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 1e-2};
  Adam adam(0.01);
  adam.step({std::span<double>(p)}, {std::span<const double>(g)});
  const std::vector<double> start{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double moved = std::abs(p[i] - start[i]);
    CHECK(moved <= 0.01 + 1e-15);
    CHECK(moved >= 0.99 * 0.01);
    CHECK((p[i] - start[i]) * g[i] < 0);
  }
  CHECK(adam.steps() == 1);

  std::vector<double> q{3.0, 4.0};
  const std::vector<double> zero{0.0, 0.0};
  Adam still(0.1);
  for (int i = 0; i < 5; ++i) still.step({std::span<double>(q)}, {std::span<const double>(zero)});
  CHECK(q == std::vector<double>{3.0, 4.0});
}

TEST_CASE("early stopping by patience") {
  EarlyStopper s(5, 1e-5);
  const std::vector<double> auc{0.6, 0.7, 0.69, 0.69, 0.69, 0.69, 0.69, 0.69};
  int stopped_at = 0;
  for (double a : auc) {
    if (s.update(a)) {
      stopped_at = s.steps();
      break;
    }
  }
  CHECK(stopped_at == 7);
  CHECK(s.best_step() == 2);
  CHECK(s.best() == 0.7);

  EarlyStopper tiny(2, 0.01);
  tiny.update(0.5);
  tiny.update(0.505);  // below min_delta: no improvement
  CHECK_FALSE(tiny.improved_last());
  CHECK(tiny.update(0.509));
}

TEST_CASE("loss pieces") {
  const std::vector<double> p{0.5, 0.5};
  const std::vector<std::uint8_t> y{1, 0};
  CHECK(weighted_bce(p, y, {2, 2}) == doctest::Approx(2 * std::log(2.0)));
  const std::vector<double> sure{1.0};
  CHECK(std::isfinite(weighted_bce(sure, std::vector<std::uint8_t>{0}, {1, 1})));

  Rng rng(1);
  auto cfg = small_config();
  MlpModel m = init_mlp(4, cfg, rng);
  double sq = 0;
  for (const auto& l : m.hidden) sq += l.weight.squaredNorm();
  CHECK(l2_penalty(m, 0.5) == doctest::Approx(0.5 * sq));

  // a dead output unit leaves only the L2 term on the kernels
  for (auto& l : m.hidden) l.weight.setConstant(0.25);
  m.out_weight.setZero();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 4);
  const std::vector<std::uint8_t> yy{1, 0, 1, 0, 1, 1};
  ForwardCache cache;
  forward_train(m, x, no_dropout(m, 6), cache);
  const auto g = backward(m, cache, yy, {1, 1}, 0.1);
  for (const auto& l : g.hidden) CHECK(l.weight.isApprox(Eigen::MatrixXd::Constant(l.weight.rows(), l.weight.cols(), 2 * 0.1 * 0.25)));
}

TEST_CASE("a zeroed output unit predicts one half") {
  Rng rng(3);
  MlpModel m = init_mlp(5, MlpConfig{}, rng);
  m.out_weight.setZero();
  m.out_bias = 0;
  const Eigen::VectorXd p = predict_proba(m, Eigen::MatrixXd::Random(8, 5));
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p(i) == 0.5);
}

TEST_CASE("training learns a separable rule and not shuffled labels") {
  Rng rng(10);
  std::normal_distribution<double> nd;
  auto make = [&](std::size_t n, Eigen::MatrixXd& x, std::vector<std::uint8_t>& y) {
    x.resize(static_cast<Eigen::Index>(n), 4);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < 4; ++j) x(static_cast<Eigen::Index>(i), j) = nd(rng);
      y[i] = x(static_cast<Eigen::Index>(i), 0) + x(static_cast<Eigen::Index>(i), 1) > 0;
    }
  };
  Eigen::MatrixXd tx, vx;
  std::vector<std::uint8_t> ty, vy;
  make(2000, tx, ty);
  make(500, vx, vy);

  MlpConfig cfg;
  cfg.hidden = {16, 8};
  cfg.dropout = {0.0, 0.0};
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 30;
  cfg.batch_size = 64;
  cfg.seed = 5;
  const auto fit = train_mlp(cfg, tx, ty, vx, vy);
  const Eigen::VectorXd p = predict_proba(fit.model, vx);
  CHECK(roc_auc(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), vy) > 0.97);
  CHECK(fit.history.best_epoch >= 1);
  CHECK(fit.history.best_epoch <= static_cast<int>(fit.history.epochs.size()));
  CHECK(fit.history.to_csv().rfind("epoch,train_loss,val_loss,train_auc,val_auc\n", 0) == 0);

  // same seed, same model
  const auto again = train_mlp(cfg, tx, ty, vx, vy);
  CHECK(predict_proba(again.model, vx) == p);

  std::vector<std::uint8_t> shuffled = vy;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto noise = ty;
  std::shuffle(noise.begin(), noise.end(), rng);
  cfg.max_epochs = 10;
  const auto null_fit = train_mlp(cfg, tx, noise, vx, shuffled);
  const Eigen::VectorXd pn = predict_proba(null_fit.model, vx);
  const double a = roc_auc(std::span<const double>(pn.data(), static_cast<std::size_t>(pn.size())), shuffled);
  CHECK(a > 0.42);
  CHECK(a < 0.58);
}

TEST_CASE("MLP serialisation round-trips exactly") {
  Rng rng(8);
  MlpModel m = init_mlp(6, MlpConfig{}, rng);
  m.hidden[0].running_mean.setConstant(0.3);
  ByteWriter w;
  m.write(w);
  ByteReader r(w.bytes());
  const MlpModel back = MlpModel::read(r);
  CHECK(r.done());
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 6);
  CHECK(predict_proba(back, x) == predict_proba(m, x));
}

TEST_CASE("MLP config validation") {
  MlpConfig c;
  c.dropout = {0.1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MlpConfig{};
  c.dropout[0] = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MlpConfig{};
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(MlpConfig{}.validate());
}
