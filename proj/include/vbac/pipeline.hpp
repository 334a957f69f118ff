#pragma once

// Run configuration and the ingest / stats / train / eval stages behind the
// command-line tool.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vbac/bundle.hpp"
#include "vbac/eval.hpp"
#include "vbac/stats.hpp"
#include "vbac/synth.hpp"

namespace vbac {

struct RunConfig {
  // Exactly one of input_csv / synth_profile.
  std::string input_csv;
  std::string schema;  // optional; identity schema when empty
  std::string synth_profile;
  std::optional<std::size_t> synth_rows;  // overrides the profile's n

  std::string output_dir = "out";
  std::vector<std::string> predictors;  // empty = every field except plurality
  std::vector<std::string> stats_variables;
  ModelFamily family = ModelFamily::kLogistic;
  std::uint64_t seed = 1;

  double logistic_test_fraction = 0.3;
  int cv_folds = 5;  // 0 disables cross-validation
  LogisticConfig logistic;
  double test_fraction = 0.2;  // mlp and gbt
  MlpConfig mlp;
  GbtConfig gbt;
  double correlation_threshold = 0.95;

  std::string threshold_rule = "f1";  // "f1" or "fixed"
  double threshold_value = 0.5;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;  // canonical; seeds of sub-configs omitted

  void validate() const;
  std::vector<std::string> resolved_predictors() const;
  std::vector<std::string> resolved_stats_variables() const;

  std::string hash() const;         // over the whole canonical config
  std::string ingest_hash() const;  // over the inputs that shape the cohort
};

std::string short_hash(const std::string& hex);  // first 8 characters

struct IngestOutputs {
  LabeledCohort cohort;
  CohortFilterReport funnel;
  std::filesystem::path cache_path;
  std::filesystem::path funnel_path;
  std::optional<double> bayes_auc;  // synthetic input only
};

std::filesystem::path cohort_cache_path(const RunConfig& config);
IngestOutputs run_ingest(const RunConfig& config);

struct StatsOutputs {
  SummaryTable table;
  std::filesystem::path text_path;
  std::filesystem::path csv_path;
};

StatsOutputs run_stats(const RunConfig& config, const LabeledCohort& cohort);

struct TrainOutputs {
  ModelBundle bundle;
  EvalReport report;
  Split split;
  std::vector<std::size_t> validation_rows;  // mlp/gbt early-stopping rows
  std::vector<double> test_scores;           // aligned with split.test
  std::optional<TrainHistory> mlp_history;
  std::optional<GbtHistory> gbt_history;
  std::optional<CoefficientReport> coefficients;
  std::optional<CvResult> cv;
  std::filesystem::path bundle_path;
  std::filesystem::path report_path;
  std::filesystem::path test_csv_path;
};

TrainOutputs run_train(const RunConfig& config, const LabeledCohort& cohort);

// Scores a labelled natality CSV with a bundle at the bundle threshold.
EvalReport run_eval(const ModelBundle& bundle, const std::filesystem::path& csv,
                    const std::filesystem::path& schema = {});

}  // namespace vbac
