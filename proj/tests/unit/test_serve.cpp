#include <doctest.h>

#include <nlohmann/json.hpp>
#include <thread>

#include "helpers.hpp"
#include "vbac/bundle.hpp"
#include "vbac/errors.hpp"
#include "vbac/serve.hpp"
#include "vbac/synth.hpp"

#include <httplib.h>

using namespace vbac;
using nlohmann::json;

namespace {

struct Fixture {
  LabeledCohort cohort;
  Preprocessor prep;
  FeatureMatrix x;
};

const Fixture& fixture(FeaturePath path) {
  static std::map<FeaturePath, Fixture> cache;
  auto it = cache.find(path);
  if (it != cache.end()) return it->second;
  auto cfg = default_synth_config();
  cfg.n = 3000;
  cfg.seed = 42;
  Fixture f;
  f.cohort = generate_cohort(cfg).labeled();
  std::vector<std::size_t> rows(f.cohort.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  f.prep = Preprocessor::fit(f.cohort.records, rows, {path, {"prepreg_bmi", "maternal_age", "payer"}, 0.95});
  f.x = f.prep.transform(f.cohort.records);
  return cache.emplace(path, std::move(f)).first->second;
}

ModelBundle logistic_bundle() {
  const auto& f = fixture(FeaturePath::kLogistic);
  ModelBundle b{f.prep, fit_logistic(f.x, f.cohort.labels), 0.6, {"cafebabe", "", f.cohort.size()}};
  return b;
}

json features(double bmi = 27, double age = 30, const std::string& payer = "medicaid") {
  return {{"prepreg_bmi", bmi}, {"maternal_age", age}, {"payer", payer}};
}

std::size_t column_of(const Preprocessor& p, const std::string& name) {
  const auto& cols = p.output_columns();
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (cols[i].name() == name) return i;
  FAIL("no column " << name);
  return 0;
}

}  // namespace

TEST_CASE("bundles of every family round-trip bit for bit") {
  const auto& logi = fixture(FeaturePath::kLogistic);
  const auto& full = fixture(FeaturePath::kFull);
  std::vector<ModelBundle> bundles;
  bundles.push_back(logistic_bundle());

  MlpConfig mc;
  mc.hidden = {8, 4};
  mc.dropout = {0.2, 0.0};
  mc.max_epochs = 3;
  mc.seed = 1;
  auto mfit = train_mlp(mc, full.x.values, full.cohort.labels, full.x.values, full.cohort.labels);
  bundles.push_back({full.prep, mfit.model, 0.5, {"m", "{}", full.cohort.size()}});

  GbtConfig gc;
  gc.rounds = 15;
  gc.learning_rate = 0.2;
  gc.seed = 3;
  auto gfit = train_boosted(gc, full.x.values, full.cohort.labels, full.x.values, full.cohort.labels);
  bundles.push_back({full.prep, gfit.model, 0.7, {"g", "", full.cohort.size()}});

  const auto dir = vbac::testing::scratch_dir("bundles");
  for (const auto& b : bundles) {
    const std::string bytes = serialize_bundle(b);
    const auto back = deserialize_bundle(bytes);
    CHECK(serialize_bundle(back) == bytes);
    CHECK(back.family() == b.family());
    CHECK(back.threshold == b.threshold);
    CHECK(back.metadata == b.metadata);
    CHECK(back.predict(b.family() == ModelFamily::kLogistic ? logi.cohort.records : full.cohort.records) ==
          b.predict(b.family() == ModelFamily::kLogistic ? logi.cohort.records : full.cohort.records));
    for (std::size_t i = 0; i < 20; ++i) {
      const auto& rec = full.cohort.records[i];
      CHECK(back.predict_row(rec) == b.predict_row(rec));
    }

    const auto path = dir / (std::string(family_name(b.family())) + ".bundle");
    save_bundle(path, b);
    CHECK(read_file(path) == bytes);
    CHECK(load_bundle(path).predict_row(full.cohort.records[0]) == b.predict_row(full.cohort.records[0]));

    CHECK_THROWS_AS(deserialize_bundle(bytes.substr(0, bytes.size() - 7)), ChecksumError);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(deserialize_bundle(flipped), ChecksumError);
  }
  CHECK_THROWS_AS(deserialize_bundle("garbage that is not a bundle at all......................."), FormatError);
  CHECK_THROWS_AS(load_bundle(dir / "absent.bundle"), MissingFileError);
}

TEST_CASE("bundle validation catches mismatched pieces") {
  auto b = logistic_bundle();
  auto& m = std::get<LogisticModel>(b.model);
  m.coefficients = Eigen::VectorXd::Zero(m.coefficients.size() + 1);
  CHECK_THROWS_AS(b.validate(), FormatError);
  CHECK(parse_family(family_name(ModelFamily::kGbt)) == ModelFamily::kGbt);
  CHECK_THROWS_AS(parse_family("forest"), ConfigError);
}

TEST_CASE("predict endpoint") {
  auto b = logistic_bundle();
  auto& m = std::get<LogisticModel>(b.model);
  const LogisticModel fitted = m;
  m.coefficients.setZero();
  m.intercept = std::log(3.0);
  const PredictionService flat(b);
  const auto r = flat.predict(json{{"features", features()}}.dump());
  REQUIRE(r.status == 200);
  const auto j = json::parse(r.body);
  CHECK(j["probability"].get<double>() == doctest::Approx(0.75));
  CHECK(j["predicted_class"] == 1);
  CHECK(j["label"] == "vbac");
  CHECK(j["threshold"] == 0.6);

  m = fitted;
  const PredictionService svc(b);
  DeliveryRecord rec;
  rec[NumericField::kPrepregBmi] = 31.5;
  rec[NumericField::kMaternalAge] = 28;
  rec[CategoricalField::kPayer] = "private";
  const auto same = json::parse(svc.predict(json{{"features", features(31.5, 28, "private")}}.dump()).body);
  CHECK(same["probability"].get<double>() == svc.bundle().predict_row(rec));

  auto missing = features();
  missing.erase("prepreg_bmi");
  const auto miss = svc.predict(json{{"features", missing}}.dump());
  CHECK(miss.status == 400);
  CHECK(json::parse(miss.body)["field"] == "prepreg_bmi");
  CHECK(miss.body.find("prepreg_bmi") != std::string::npos);

  const auto unseen = svc.predict(json{{"features", features(27, 30, "barter")}}.dump());
  CHECK(unseen.status == 422);
  const auto uj = json::parse(unseen.body);
  CHECK(uj["field"] == "payer");
  CHECK(uj["level"] == "barter");
  const auto allowed = uj["allowed"].get<std::vector<std::string>>();
  CHECK(std::find(allowed.begin(), allowed.end(), "medicaid") != allowed.end());

  CHECK(svc.predict("{not json").status == 400);
  CHECK(svc.predict("[]").status == 400);
  CHECK(svc.predict(json{{"features", features(-4)}}.dump()).status == 400);
  CHECK(svc.predict(json{{"features", features(std::nan(""))}}.dump()).status == 400);
  auto extra = features();
  extra["shoe_size"] = 9;
  CHECK(svc.predict(json{{"features", extra}}.dump()).status == 400);
  CHECK(svc.predict(json{{"features", {{"prepreg_bmi", "heavy"}, {"maternal_age", 30}, {"payer", "medicaid"}}}}.dump()).status == 400);
}

TEST_CASE("what-if sweeps") {
  auto b = logistic_bundle();
  auto& m = std::get<LogisticModel>(b.model);
  m.coefficients(static_cast<Eigen::Index>(column_of(b.preprocessor, "prepreg_bmi"))) = -0.5;
  const PredictionService svc(b);

  const auto r = svc.whatif(json{{"features", features()}, {"field", "prepreg_bmi"}, {"grid", {18, 22, 26, 30, 40}}}.dump());
  REQUIRE(r.status == 200);
  const auto results = json::parse(r.body)["results"];
  REQUIRE(results.size() == 5);
  for (std::size_t i = 1; i < results.size(); ++i)
    CHECK(results[i]["probability"].get<double>() < results[i - 1]["probability"].get<double>());
  CHECK(results[0]["value"] == 18);

  const auto one = json::parse(svc.whatif(json{{"features", features(33)}, {"field", "prepreg_bmi"}, {"grid", {33}}}.dump()).body);
  const auto direct = json::parse(svc.predict(json{{"features", features(33)}}.dump()).body);
  CHECK(one["results"][0]["probability"] == direct["probability"]);

  const auto& levels = b.preprocessor.encoder().fields();
  std::vector<std::string> payer_levels;
  for (const auto& f : levels)
    if (f.name == "payer") payer_levels = f.levels;
  REQUIRE(payer_levels.size() >= 2);
  const auto cat = svc.whatif(json{{"features", features()}, {"field", "payer"}, {"grid", payer_levels}}.dump());
  REQUIRE(cat.status == 200);
  CHECK(json::parse(cat.body)["results"].size() == payer_levels.size());

  CHECK(svc.whatif(json{{"features", features()}, {"field", "shoe_size"}, {"grid", {1}}}.dump()).status == 400);
  CHECK(svc.whatif(json{{"features", features()}, {"field", "prepreg_bmi"}, {"grid", json::array()}}.dump()).status == 400);
  CHECK(svc.whatif(json{{"features", features()}, {"field", "payer"}, {"grid", {"barter"}}}.dump()).status == 422);
}

TEST_CASE("metadata describes the bundle") {
  auto b = logistic_bundle();
  b.metadata.eval_summary = R"({"roc_auc":0.7})";
  const PredictionService svc(b);
  const auto j = json::parse(svc.metadata().body);
  CHECK(j["family"] == "logistic");
  CHECK(j["threshold"] == 0.6);
  CHECK(j["config_hash"] == "cafebabe");
  CHECK(j["eval"]["roc_auc"] == 0.7);
  CHECK(j["features"].size() == b.preprocessor.output_width());
  std::vector<std::string> names;
  for (const auto& f : j["fields"]) names.push_back(f["name"]);
  CHECK(names == b.preprocessor.predictors());
  for (const auto& f : j["fields"]) {
    if (f["type"] == "numeric") CHECK(f["min"].get<double>() <= f["max"].get<double>());
    else CHECK(!f["levels"].empty());
  }
  CHECK(svc.healthz().status == 200);
}

TEST_CASE("HTTP server answers on an ephemeral port") {
  const PredictionService svc(logistic_bundle());
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.listen(); });
  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5);
  httplib::Result health;
  for (int attempt = 0; attempt < 50 && !health; ++attempt) {
    health = client.Get("/healthz");
    if (!health) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "ok");

  const auto pred = client.Post("/predict", json{{"features", features()}}.dump(), "application/json");
  REQUIRE(pred);
  CHECK(pred->status == 200);
  const auto bad = client.Post("/predict", json{{"features", features(27, 30, "barter")}}.dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  const auto meta = client.Get("/metadata");
  REQUIRE(meta);
  CHECK(meta->body == svc.metadata().body);

  server.stop();
  t.join();
}
