#include "vbac/pipeline.hpp"

#include <nlohmann/json.hpp>
#include <set>

#include "vbac/errors.hpp"
#include "vbac/util.hpp"

namespace vbac {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::vector<std::string> kDefaultStats = {
    "maternal_age",    "gestational_age",           "prepreg_bmi", "birth_weight",
    "prenatal_visits", "interval_since_last_birth", "payer",       "race_ethnicity",
    "delivery_place"};

// Reads members of `j` into fields, rejecting keys nobody consumed.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const json* section(const char* key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

ordered_json logistic_json(const LogisticConfig& c) {
  return {{"l2", c.l2},
          {"max_iterations", c.max_iterations},
          {"gradient_tolerance", c.gradient_tolerance},
          {"relative_ll_tolerance", c.relative_ll_tolerance}};
}

ordered_json mlp_json(const MlpConfig& c) {
  return {{"hidden", c.hidden},
          {"dropout", c.dropout},
          {"leaky_slope", c.leaky_slope},
          {"l2", c.l2},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"min_delta", c.min_delta},
          {"bn_momentum", c.bn_momentum},
          {"bn_epsilon", c.bn_epsilon},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"validation_fraction", c.validation_fraction}};
}

ordered_json gbt_json(const GbtConfig& c) {
  return {{"rounds", c.rounds},
          {"learning_rate", c.learning_rate},
          {"max_depth", c.max_depth},
          {"subsample", c.subsample},
          {"colsample", c.colsample},
          {"early_stopping_rounds", c.early_stopping_rounds},
          {"min_delta", c.min_delta},
          {"alpha", c.alpha},
          {"alpha_target", alpha_target_name(c.alpha_target)},
          {"lambda", c.lambda},
          {"gamma", c.gamma},
          {"min_child_weight", c.min_child_weight},
          {"validation_fraction", c.validation_fraction}};
}

std::vector<std::uint8_t> gather(std::span<const std::uint8_t> labels, std::span<const std::size_t> rows) {
  std::vector<std::uint8_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[r]);
  return out;
}

std::vector<std::size_t> gather(std::span<const std::size_t> index, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(index[r]);
  return out;
}

std::string file_digest(const std::string& path) {
  if (path.empty()) return {};
  return sha256_hex(read_file(path));
}

template <typename F>
auto stage(const char* name, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  } catch (const MissingFileError&) {
    throw;
  } catch (const EmptyFileError&) {
    throw;
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

NatalitySchema schema_for(const std::string& path) {
  return path.empty() ? identity_schema() : NatalitySchema::load(path);
}

}  // namespace

std::string short_hash(const std::string& hex) { return hex.substr(0, 8); }

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  std::string family = "logistic";
  {
    Reader top(j, "config");
    if (const auto* in = top.section("input")) {
      Reader r(*in, "input");
      r.get("csv", c.input_csv);
      r.get("schema", c.schema);
      r.get("synth_profile", c.synth_profile);
      std::size_t rows = 0;
      r.get("synth_rows", rows);
      if (rows > 0) c.synth_rows = rows;
    }
    top.get("output_dir", c.output_dir);
    top.get("predictors", c.predictors);
    top.get("stats_variables", c.stats_variables);
    top.get("family", family);
    top.get("seed", c.seed);
    if (const auto* s = top.section("split")) {
      Reader r(*s, "split");
      r.get("logistic_test_fraction", c.logistic_test_fraction);
      r.get("test_fraction", c.test_fraction);
      r.get("cv_folds", c.cv_folds);
    }
    top.get("correlation_threshold", c.correlation_threshold);
    if (const auto* s = top.section("threshold")) {
      Reader r(*s, "threshold");
      r.get("rule", c.threshold_rule);
      r.get("value", c.threshold_value);
    }
    if (const auto* s = top.section("logistic")) {
      Reader r(*s, "logistic");
      r.get("l2", c.logistic.l2);
      r.get("max_iterations", c.logistic.max_iterations);
      r.get("gradient_tolerance", c.logistic.gradient_tolerance);
      r.get("relative_ll_tolerance", c.logistic.relative_ll_tolerance);
    }
    if (const auto* s = top.section("mlp")) {
      Reader r(*s, "mlp");
      auto& m = c.mlp;
      r.get("hidden", m.hidden);
      r.get("dropout", m.dropout);
      r.get("leaky_slope", m.leaky_slope);
      r.get("l2", m.l2);
      r.get("learning_rate", m.learning_rate);
      r.get("batch_size", m.batch_size);
      r.get("max_epochs", m.max_epochs);
      r.get("patience", m.patience);
      r.get("min_delta", m.min_delta);
      r.get("bn_momentum", m.bn_momentum);
      r.get("bn_epsilon", m.bn_epsilon);
      r.get("adam_beta1", m.adam_beta1);
      r.get("adam_beta2", m.adam_beta2);
      r.get("adam_epsilon", m.adam_epsilon);
      r.get("validation_fraction", m.validation_fraction);
    }
    if (const auto* s = top.section("gbt")) {
      Reader r(*s, "gbt");
      auto& g = c.gbt;
      std::string target = alpha_target_name(g.alpha_target);
      r.get("rounds", g.rounds);
      r.get("learning_rate", g.learning_rate);
      r.get("max_depth", g.max_depth);
      r.get("subsample", g.subsample);
      r.get("colsample", g.colsample);
      r.get("early_stopping_rounds", g.early_stopping_rounds);
      r.get("min_delta", g.min_delta);
      r.get("alpha", g.alpha);
      r.get("alpha_target", target);
      r.get("lambda", g.lambda);
      r.get("gamma", g.gamma);
      r.get("min_child_weight", g.min_child_weight);
      r.get("validation_fraction", g.validation_fraction);
      g.alpha_target = parse_alpha_target(target);
    }
  }
  c.family = parse_family(family);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError(path.string());
  return from_json_text(read_file(path));
}

std::string RunConfig::to_json_text() const {
  ordered_json j;
  ordered_json in;
  in["csv"] = input_csv;
  in["schema"] = schema;
  in["synth_profile"] = synth_profile;
  in["synth_rows"] = synth_rows ? json(*synth_rows) : json();
  j["input"] = in;
  j["output_dir"] = output_dir;
  j["predictors"] = predictors;
  j["stats_variables"] = stats_variables;
  j["family"] = family_name(family);
  j["seed"] = seed;
  j["split"] = {{"logistic_test_fraction", logistic_test_fraction},
                {"test_fraction", test_fraction},
                {"cv_folds", cv_folds}};
  j["correlation_threshold"] = correlation_threshold;
  j["threshold"] = {{"rule", threshold_rule}, {"value", threshold_value}};
  j["logistic"] = logistic_json(logistic);
  j["mlp"] = mlp_json(mlp);
  j["gbt"] = gbt_json(gbt);
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  if (input_csv.empty() == synth_profile.empty())
    throw ConfigError("config: set exactly one of input.csv and input.synth_profile");
  if (!input_csv.empty() && !fs::exists(input_csv)) throw MissingFileError(input_csv);
  if (!synth_profile.empty() && !fs::exists(synth_profile)) throw MissingFileError(synth_profile);
  if (!schema.empty() && !fs::exists(schema)) throw MissingFileError(schema);
  if (synth_rows && *synth_rows == 0) throw ConfigError("config: input.synth_rows must be positive");
  if (output_dir.empty()) throw ConfigError("config: output_dir is empty");
  for (const auto& p : resolved_predictors()) {
    if (!find_field(p)) throw ConfigError("config: unknown predictor '" + p + "'");
    if (p == "plurality") throw ConfigError("config: plurality is an inclusion criterion, not a predictor");
  }
  for (const auto& v : resolved_stats_variables())
    if (!find_field(v)) throw ConfigError("config: unknown stats variable '" + v + "'");
  auto fraction = [](double f, const char* name) {
    if (!(f > 0 && f < 1)) throw ConfigError(std::string("config: ") + name + " must lie in (0, 1)");
  };
  fraction(logistic_test_fraction, "split.logistic_test_fraction");
  fraction(test_fraction, "split.test_fraction");
  if (cv_folds == 1 || cv_folds < 0) throw ConfigError("config: split.cv_folds must be 0 or at least 2");
  if (!(correlation_threshold > 0 && correlation_threshold <= 1))
    throw ConfigError("config: correlation_threshold must lie in (0, 1]");
  if (threshold_rule != "f1" && threshold_rule != "fixed")
    throw ConfigError("config: threshold.rule must be \"f1\" or \"fixed\"");
  if (!(threshold_value > 0 && threshold_value < 1)) throw ConfigError("config: threshold.value must lie in (0, 1)");
  if (logistic.l2 < 0 || logistic.max_iterations < 1) throw ConfigError("config: bad logistic settings");
  mlp.validate();
  gbt.validate();
}

std::vector<std::string> RunConfig::resolved_predictors() const {
  if (!predictors.empty()) return predictors;
  std::vector<std::string> out;
  for (const auto& name : predictor_field_names())
    if (name != "plurality") out.push_back(name);
  return out;
}

std::vector<std::string> RunConfig::resolved_stats_variables() const {
  return stats_variables.empty() ? kDefaultStats : stats_variables;
}

// output_dir is left out so the same run in two places hashes the same.
std::string RunConfig::hash() const {
  RunConfig c = *this;
  c.output_dir.clear();
  return sha256_hex(c.to_json_text() + file_digest(input_csv) + file_digest(synth_profile) + file_digest(schema));
}

std::string RunConfig::ingest_hash() const {
  ordered_json j;
  j["csv"] = file_digest(input_csv);
  j["schema"] = file_digest(schema);
  j["synth_profile"] = file_digest(synth_profile);
  j["synth_rows"] = synth_rows ? json(*synth_rows) : json();
  j["predictors"] = resolved_predictors();
  j["seed"] = seed;
  return sha256_hex(j.dump());
}

fs::path cohort_cache_path(const RunConfig& config) {
  return fs::path(config.output_dir) / ("cohort-" + short_hash(config.ingest_hash()) + ".bin");
}

IngestOutputs run_ingest(const RunConfig& config) {
  config.validate();
  return stage("ingest", [&] {
    const std::string h8 = short_hash(config.ingest_hash());
    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir);

    IngestOutputs out;
    std::vector<DeliveryRecord> records;
    std::string source;
    if (!config.synth_profile.empty()) {
      SynthConfig profile = SynthConfig::load(config.synth_profile);
      profile.seed = derive_seed(config.seed, "synth");
      if (config.synth_rows) profile.n = *config.synth_rows;
      const SynthCohort synth = generate_cohort(profile);
      out.bayes_auc = bayes_auc(synth);
      const fs::path csv = out_dir / ("synth-" + h8 + ".csv");
      write_file(csv, synth.to_csv());
      ordered_json info;
      info["config_hash"] = config.ingest_hash();
      info["rows"] = synth.records.size();
      info["seed"] = profile.seed;
      info["intercept"] = synth.intercept;
      info["bayes_auc"] = *out.bayes_auc;
      write_file(out_dir / ("synth-" + h8 + ".json"), info.dump(2) + "\n");
      records = parse_natality_csv(csv, identity_schema());
      source = csv.string();
    } else {
      records = parse_natality_csv(config.input_csv, schema_for(config.schema));
      source = config.input_csv;
    }

    CohortFilterConfig filter;
    filter.predictors = config.resolved_predictors();
    auto [kept, report] = apply_cohort_filter(records, filter);
    out.cohort = assign_labels(std::move(kept), Provenance{{source}, filter.hash()});
    out.funnel = std::move(report);

    out.cache_path = cohort_cache_path(config);
    out.funnel_path = out_dir / ("funnel-" + h8 + ".tsv");
    write_cohort_cache(out.cache_path, out.cohort);
    write_file(out.funnel_path, out.funnel.to_tsv());
    return out;
  });
}

StatsOutputs run_stats(const RunConfig& config, const LabeledCohort& cohort) {
  return stage("stats", [&] {
    const std::string h8 = short_hash(config.hash());
    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir);
    StatsOutputs out{summary_table(cohort, config.resolved_stats_variables()), {}, {}};
    out.text_path = out_dir / ("summary-" + h8 + ".txt");
    out.csv_path = out_dir / ("summary-" + h8 + ".csv");
    write_file(out.text_path, out.table.to_text());
    write_file(out.csv_path, out.table.to_csv());
    return out;
  });
}

TrainOutputs run_train(const RunConfig& config, const LabeledCohort& cohort) {
  config.validate();
  return stage("train", [&] {
    if (cohort.size() == 0) throw DataError("cohort", "no records to train on");
    const std::string hash = config.hash();
    const std::string h8 = short_hash(hash);
    const std::string family(family_name(config.family));
    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir);
    const std::span<const std::uint8_t> labels(cohort.labels);

    TrainOutputs out;
    PreprocessConfig prep;
    prep.predictors = config.resolved_predictors();
    prep.correlation_threshold = config.correlation_threshold;

    const bool logistic = config.family == ModelFamily::kLogistic;
    out.split = stratified_split(labels, logistic ? config.logistic_test_fraction : config.test_fraction,
                                 derive_seed(config.seed, "split"));
    prep.path = logistic ? FeaturePath::kLogistic : FeaturePath::kFull;
    out.bundle.preprocessor = Preprocessor::fit(cohort.records, out.split.train, prep);
    const FeatureMatrix all = out.bundle.preprocessor.transform(cohort.records);
    const FeatureMatrix test_x = all.select_rows(out.split.test);
    const auto test_y = gather(labels, out.split.test);

    // Rows that pick the threshold.
    std::vector<double> pick_scores;
    std::vector<std::uint8_t> pick_labels;
    std::size_t fit_rows = 0;

    if (logistic) {
      const FeatureMatrix train_x = all.select_rows(out.split.train);
      const auto train_y = gather(labels, out.split.train);
      LogisticModel model = fit_logistic(train_x, train_y, config.logistic);
      if (config.logistic.l2 == 0 && model.converged) {
        try {
          out.coefficients = wald_report(model, train_x.values);
          write_file(out_dir / ("coefficients-" + h8 + ".csv"), out.coefficients->to_csv());
        } catch (const SingularMatrixError&) {
          // no standard errors for a rank-deficient design; the fit still stands
        }
      }
      if (config.cv_folds >= 2) {
        out.cv = cross_validate_auc(cohort, prep, config.cv_folds, derive_seed(config.seed, "cv"), config.logistic);
        std::string csv = "fold,auc\n";
        for (std::size_t i = 0; i < out.cv->fold_auc.size(); ++i)
          csv += std::to_string(i + 1) + "," + format_double(out.cv->fold_auc[i]) + "\n";
        csv += "mean," + format_double(out.cv->mean_auc) + "\n";
        write_file(out_dir / ("cv-" + h8 + ".csv"), csv);
      }
      const Eigen::VectorXd p = predict_proba(model, train_x.values);
      pick_scores.assign(p.data(), p.data() + p.size());
      pick_labels = train_y;
      fit_rows = out.split.train.size();
      out.bundle.model = std::move(model);
    } else {
      const auto train_y_all = gather(labels, out.split.train);
      const double val_fraction = config.family == ModelFamily::kMlp ? config.mlp.validation_fraction
                                                                      : config.gbt.validation_fraction;
      const Split inner = stratified_split(train_y_all, val_fraction, derive_seed(config.seed, "validation"));
      const auto fit_index = gather(std::span<const std::size_t>(out.split.train), inner.train);
      out.validation_rows = gather(std::span<const std::size_t>(out.split.train), inner.test);
      const FeatureMatrix fit_x = all.select_rows(fit_index);
      const FeatureMatrix val_x = all.select_rows(out.validation_rows);
      const auto fit_y = gather(labels, fit_index);
      const auto val_y = gather(labels, out.validation_rows);
      fit_rows = fit_index.size();

      if (config.family == ModelFamily::kMlp) {
        MlpConfig mc = config.mlp;
        mc.seed = derive_seed(config.seed, "mlp");
        MlpFit fit = train_mlp(mc, fit_x.values, fit_y, val_x.values, val_y);
        write_file(out_dir / ("history-mlp-" + h8 + ".csv"), fit.history.to_csv());
        out.mlp_history = std::move(fit.history);
        out.bundle.model = std::move(fit.model);
      } else {
        GbtConfig gc = config.gbt;
        gc.seed = derive_seed(config.seed, "gbt");
        GbtFit fit = train_boosted(gc, fit_x.values, fit_y, val_x.values, val_y);
        fit.model.feature_names = all.column_names();
        write_file(out_dir / ("history-gbt-" + h8 + ".csv"), fit.history.to_csv());
        write_file(out_dir / ("trees-" + h8 + ".txt"), fit.model.dump());
        out.gbt_history = std::move(fit.history);
        out.bundle.model = std::move(fit.model);
      }
      for (Eigen::Index i = 0; i < val_x.rows(); ++i) {
        const Eigen::RowVectorXd row = val_x.values.row(i);
        pick_scores.push_back(out.bundle.predict_encoded(std::span<const double>(row.data(), row.size())));
      }
      pick_labels = val_y;
    }

    out.bundle.threshold = config.threshold_rule == "fixed" ? config.threshold_value
                                                            : optimal_f1_threshold(pick_scores, pick_labels).threshold;
    if (!(out.bundle.threshold > 0 && out.bundle.threshold < 1)) out.bundle.threshold = 0.5;

    const Eigen::VectorXd scores = out.bundle.predict(test_x);
    out.test_scores.assign(scores.data(), scores.data() + scores.size());
    out.report = classification_report(out.test_scores, test_y, out.bundle.threshold);

    out.bundle.metadata.config_hash = hash;
    out.bundle.metadata.eval_summary = out.report.to_json();
    out.bundle.metadata.training_rows = fit_rows;

    out.bundle_path = out_dir / ("model-" + family + "-" + h8 + ".bundle");
    out.report_path = out_dir / ("eval-" + family + "-" + h8 + ".json");
    out.test_csv_path = out_dir / ("test-" + family + "-" + h8 + ".csv");
    save_bundle(out.bundle_path, out.bundle);

    ordered_json report = ordered_json::parse(out.report.to_json());
    report["family"] = family;
    report["config_hash"] = hash;
    write_file(out.report_path, report.dump(2) + "\n");
    write_file(out_dir / ("roc-" + family + "-" + h8 + ".csv"), roc_to_csv(roc_curve(out.test_scores, test_y)));
    write_file(out_dir / ("pr-" + family + "-" + h8 + ".csv"), pr_to_csv(pr_curve_auc(out.test_scores, test_y)));

    std::vector<DeliveryRecord> test_records;
    test_records.reserve(out.split.test.size());
    for (auto r : out.split.test) test_records.push_back(cohort.records[r]);
    write_file(out.test_csv_path, to_natality_csv(test_records));
    write_file(out_dir / ("run-" + h8 + ".json"), config.to_json_text());
    return out;
  });
}

EvalReport run_eval(const ModelBundle& bundle, const fs::path& csv, const fs::path& schema) {
  if (!fs::exists(csv)) throw MissingFileError(csv.string());
  if (!schema.empty() && !fs::exists(schema)) throw MissingFileError(schema.string());
  return stage("eval", [&] {
    const auto records = parse_natality_csv(csv, schema.empty() ? identity_schema() : NatalitySchema::load(schema));
    CohortFilterConfig filter;
    filter.predictors = bundle.preprocessor.predictors();
    auto [kept, report] = apply_cohort_filter(records, filter);
    if (kept.empty()) throw DataError("cohort", "no records survive the inclusion filter");
    const LabeledCohort cohort = assign_labels(std::move(kept));
    const Eigen::VectorXd scores = bundle.predict(cohort.records);
    return classification_report(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
                                 cohort.labels, bundle.threshold);
  });
}

}  // namespace vbac
