#include <doctest.h>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "vbac/errors.hpp"
#include "vbac/pipeline.hpp"

using namespace vbac;

namespace {

const std::filesystem::path kSource = VBAC_SOURCE_DIR;

RunConfig small_run(const std::string& name, ModelFamily family = ModelFamily::kLogistic) {
  RunConfig c;
  c.synth_profile = (kSource / "config" / "default_profile.json").string();
  c.synth_rows = 4000;
  c.output_dir = vbac::testing::scratch_dir(name).string();
  c.family = family;
  c.seed = 99;
  c.cv_folds = 3;
  c.mlp.max_epochs = 3;
  c.mlp.hidden = {8};
  c.mlp.dropout = {0.0};
  c.gbt.rounds = 20;
  c.gbt.learning_rate = 0.1;
  return c;
}

}  // namespace

TEST_CASE("shipped run config parses and validates") {
  const auto text = read_file(kSource / "config" / "run.json");
  auto cfg = RunConfig::from_json_text(text);
  CHECK(cfg.seed == 20170101);
  CHECK(cfg.family == ModelFamily::kLogistic);
  CHECK(cfg.gbt.alpha == 2.5);
  CHECK(cfg.cv_folds == 5);
  cfg.synth_profile = (kSource / cfg.synth_profile).string();
  CHECK_NOTHROW(cfg.validate());
  CHECK(RunConfig::from_json_text(cfg.to_json_text()).to_json_text() == cfg.to_json_text());
  const auto predictors = cfg.resolved_predictors();
  CHECK(std::find(predictors.begin(), predictors.end(), "plurality") == predictors.end());
}

TEST_CASE("config errors are caught before any work") {
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"seeed": 3})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"mlp": {"epochs": 3}})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text(R"({"family": "forest"})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json_text("{"), ConfigError);

  auto c = small_run("cfg-errors");
  c.input_csv = "x.csv";
  CHECK_THROWS_AS(c.validate(), ConfigError);  // both inputs
  c = small_run("cfg-errors");
  c.predictors = {"plurality"};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_run("cfg-errors");
  c.threshold_rule = "youden";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_run("cfg-errors");
  c.cv_folds = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_run("cfg-errors");
  c.synth_profile = "/definitely/not/here.json";
  CHECK_THROWS_AS(c.validate(), MissingFileError);
  c = small_run("cfg-errors");
  c.synth_profile.clear();
  c.input_csv = "/definitely/not/here.csv";
  CHECK_THROWS_AS(run_ingest(c), MissingFileError);
}

TEST_CASE("hashes ignore the output directory and track everything else") {
  auto a = small_run("hash-a");
  auto b = a;
  b.output_dir = "/tmp/elsewhere";
  CHECK(a.hash() == b.hash());
  CHECK(a.ingest_hash() == b.ingest_hash());
  b.gbt.alpha = 1.0;
  CHECK(a.hash() != b.hash());
  CHECK(a.ingest_hash() == b.ingest_hash());
  b.synth_rows = 5000;
  CHECK(a.ingest_hash() != b.ingest_hash());
  CHECK(short_hash(a.hash()).size() == 8);
}

TEST_CASE("ingest on synthetic input keeps every row and caches stably") {
  const auto cfg = small_run("ingest");
  const auto first = run_ingest(cfg);
  CHECK(first.cohort.size() == 4000);
  CHECK(first.funnel.steps.back().remaining == 4000);
  CHECK(first.bayes_auc.has_value());
  CHECK(std::filesystem::exists(first.cache_path));
  CHECK(first.cache_path == cohort_cache_path(cfg));
  const std::string bytes = read_file(first.cache_path);
  const auto second = run_ingest(cfg);
  CHECK(read_file(second.cache_path) == bytes);
  CHECK(read_cohort_cache(first.cache_path) == first.cohort);
  CHECK(read_file(first.funnel_path).rfind("input\t4000\n", 0) == 0);
}

TEST_CASE("stats stage writes both renderings") {
  const auto cfg = small_run("stats");
  const auto cohort = run_ingest(cfg).cohort;
  const auto out = run_stats(cfg, cohort);
  CHECK(out.table.rows.size() >= cfg.resolved_stats_variables().size());
  CHECK(read_file(out.csv_path) == out.table.to_csv());
  CHECK(read_file(out.text_path) == out.table.to_text());
}

TEST_CASE("train then eval reproduces the held-out report") {
  for (auto family : {ModelFamily::kLogistic, ModelFamily::kMlp, ModelFamily::kGbt}) {
    CAPTURE(family_name(family));
    const auto cfg = small_run("train-" + std::string(family_name(family)), family);
    const auto cohort = run_ingest(cfg).cohort;
    const auto out = run_train(cfg, cohort);
    CHECK(out.bundle.family() == family);
    CHECK(out.report.n() == out.split.test.size());
    CHECK(std::filesystem::exists(out.bundle_path));
    CHECK(out.bundle.threshold > 0);
    CHECK(out.bundle.threshold < 1);
    CHECK(out.report.roc_auc > 0.55);

    const auto loaded = load_bundle(out.bundle_path);
    const auto again = run_eval(loaded, out.test_csv_path);
    CHECK(again.to_json() == out.report.to_json());
    CHECK(nlohmann::json::parse(loaded.metadata.eval_summary) == nlohmann::json::parse(out.report.to_json()));

    const auto report = nlohmann::json::parse(read_file(out.report_path));
    CHECK(report["family"] == family_name(family));
    CHECK(report["roc_auc"].get<double>() == out.report.roc_auc);

    if (family == ModelFamily::kLogistic) {
      REQUIRE(out.cv.has_value());
      CHECK(out.cv->fold_auc.size() == 3);
      CHECK(out.coefficients.has_value());
    }
    if (family == ModelFamily::kMlp) CHECK(out.mlp_history.has_value());
    if (family == ModelFamily::kGbt) CHECK(out.gbt_history.has_value());

    // the test split is disjoint from training and validation rows
    std::vector<bool> in_test(cohort.size(), false);
    for (auto r : out.split.test) in_test[r] = true;
    for (auto r : out.split.train) CHECK_FALSE(in_test[r]);
  }
}

TEST_CASE("fixed threshold rule is honoured") {
  auto cfg = small_run("fixed-threshold");
  cfg.threshold_rule = "fixed";
  cfg.threshold_value = 0.42;
  cfg.cv_folds = 0;
  const auto out = run_train(cfg, run_ingest(cfg).cohort);
  CHECK(out.bundle.threshold == 0.42);
  CHECK(out.report.threshold == 0.42);
  CHECK_FALSE(out.cv.has_value());
}
