// vbac: synth / ingest / stats / train / eval / serve.

#include <CLI11.hpp>
#include <csignal>
#include <filesystem>
#include <iostream>

#include "vbac/errors.hpp"
#include "vbac/pipeline.hpp"
#include "vbac/serve.hpp"
#include "vbac/util.hpp"

namespace fs = std::filesystem;
using namespace vbac;

namespace {

// Flags shared by the config-driven subcommands. Anything set here wins over
// the config file.
struct Overrides {
  std::string config;
  std::string input;
  std::string schema;
  std::string synth_profile;
  std::size_t synth_rows = 0;
  std::string output_dir;
  std::string family;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> predictors;
  std::string threshold_rule;
  std::optional<double> threshold;
  std::optional<int> cv_folds;
  std::optional<double> gbt_alpha;
  std::optional<int> gbt_rounds;
  std::optional<int> mlp_epochs;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "run config JSON")->check(CLI::ExistingFile);
    app->add_option("--input", input, "natality CSV");
    app->add_option("--schema", schema, "column mapping JSON");
    app->add_option("--synth-profile", synth_profile, "synthetic profile JSON instead of a CSV");
    app->add_option("--synth-rows", synth_rows, "rows to generate");
    app->add_option("-o,--output-dir", output_dir);
    app->add_option("--family", family, "logistic, mlp or gbt");
    app->add_option("--seed", seed, "root seed");
    app->add_option("--predictors", predictors, "comma-separated predictor list")->delimiter(',');
    app->add_option("--threshold-rule", threshold_rule, "f1 or fixed");
    app->add_option("--threshold", threshold, "fixed decision threshold");
    app->add_option("--cv-folds", cv_folds, "logistic k-fold CV (0 = off)");
    app->add_option("--gbt-alpha", gbt_alpha);
    app->add_option("--gbt-rounds", gbt_rounds);
    app->add_option("--mlp-epochs", mlp_epochs);
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : RunConfig::load(config);
    if (!input.empty()) {
      c.input_csv = input;
      c.synth_profile.clear();
    }
    if (!synth_profile.empty()) {
      c.synth_profile = synth_profile;
      c.input_csv.clear();
    }
    if (!schema.empty()) c.schema = schema;
    if (synth_rows > 0) c.synth_rows = synth_rows;
    if (!output_dir.empty()) c.output_dir = output_dir;
    if (!family.empty()) c.family = parse_family(family);
    if (seed) c.seed = *seed;
    if (!predictors.empty()) c.predictors = predictors;
    if (!threshold_rule.empty()) c.threshold_rule = threshold_rule;
    if (threshold) {
      c.threshold_value = *threshold;
      if (threshold_rule.empty()) c.threshold_rule = "fixed";
    }
    if (cv_folds) c.cv_folds = *cv_folds;
    if (gbt_alpha) c.gbt.alpha = *gbt_alpha;
    if (gbt_rounds) c.gbt.rounds = *gbt_rounds;
    if (mlp_epochs) c.mlp.max_epochs = *mlp_epochs;
    c.validate();
    return c;
  }
};

void print_funnel(const CohortFilterReport& funnel) {
  for (const auto& s : funnel.steps) std::cout << "  " << s.name << '\t' << s.remaining << '\n';
}

// Cached cohort when the ingest hash matches, otherwise a fresh ingest.
LabeledCohort cohort_for(const RunConfig& c) {
  const auto cache = cohort_cache_path(c);
  if (fs::exists(cache)) {
    std::cout << "cohort cache " << cache.string() << '\n';
    return read_cohort_cache(cache);
  }
  auto in = run_ingest(c);
  std::cout << "ingested " << in.cohort.size() << " records -> " << in.cache_path.string() << '\n';
  return std::move(in.cohort);
}

HttpServer* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VBAC outcome modelling toolkit"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic natality CSV");
  std::string profile_path, synth_out;
  std::size_t rows = 0;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--profile", profile_path, "profile JSON (default profile when omitted)")->check(CLI::ExistingFile);
  synth->add_option("--rows", rows);
  synth->add_option("--seed", synth_seed);
  synth->add_option("-o,--out", synth_out, "CSV path")->required();

  Overrides ingest_o, stats_o, train_o;
  auto* ingest = app.add_subcommand("ingest", "filter, label and cache a cohort");
  ingest_o.attach(ingest);
  auto* stats = app.add_subcommand("stats", "outcome summary table");
  stats_o.attach(stats);
  std::vector<std::string> stats_vars;
  stats->add_option("--variables", stats_vars)->delimiter(',');
  auto* train = app.add_subcommand("train", "train, evaluate and bundle one model family");
  train_o.attach(train);

  auto* eval = app.add_subcommand("eval", "re-score a bundle on a labelled CSV");
  std::string eval_bundle, eval_csv, eval_schema, eval_out;
  eval->add_option("--bundle", eval_bundle)->required()->check(CLI::ExistingFile);
  eval->add_option("--csv", eval_csv)->required()->check(CLI::ExistingFile);
  eval->add_option("--schema", eval_schema)->check(CLI::ExistingFile);
  eval->add_option("-o,--out", eval_out, "report JSON path");

  auto* serve = app.add_subcommand("serve", "HTTP prediction service");
  std::string serve_bundle, host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--bundle", serve_bundle)->required()->check(CLI::ExistingFile);
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      SynthConfig cfg = profile_path.empty() ? default_synth_config() : SynthConfig::load(profile_path);
      if (rows > 0) cfg.n = rows;
      if (synth_seed) cfg.seed = *synth_seed;
      const SynthCohort cohort = generate_cohort(cfg);
      write_file(synth_out, cohort.to_csv());
      std::cout << "wrote " << cohort.records.size() << " rows to " << synth_out << "\nintercept "
                << format_double(cohort.intercept) << "\nbayes_auc " << format_double(bayes_auc(cohort)) << '\n';
    } else if (*ingest) {
      const RunConfig c = ingest_o.resolve();
      const auto out = run_ingest(c);
      std::cout << "funnel (" << out.funnel_path.string() << ")\n";
      print_funnel(out.funnel);
      if (out.bayes_auc) std::cout << "bayes_auc " << format_double(*out.bayes_auc) << '\n';
      std::cout << "cohort cache " << out.cache_path.string() << '\n';
    } else if (*stats) {
      RunConfig c = stats_o.resolve();
      if (!stats_vars.empty()) c.stats_variables = stats_vars;
      c.validate();
      const auto out = run_stats(c, cohort_for(c));
      std::cout << out.table.to_text() << "wrote " << out.csv_path.string() << '\n';
    } else if (*train) {
      const RunConfig c = train_o.resolve();
      const auto out = run_train(c, cohort_for(c));
      std::cout << family_name(c.family) << " test roc_auc " << format_double(out.report.roc_auc) << " pr_auc "
                << format_double(out.report.pr_auc) << " threshold " << format_double(out.bundle.threshold) << '\n';
      if (out.cv) std::cout << "cv mean auc " << format_double(out.cv->mean_auc) << '\n';
      std::cout << "bundle " << out.bundle_path.string() << "\nreport " << out.report_path.string() << '\n';
    } else if (*eval) {
      const auto bundle = load_bundle(eval_bundle);
      const auto report = run_eval(bundle, eval_csv, eval_schema);
      if (!eval_out.empty()) write_file(eval_out, report.to_json() + "\n");
      std::cout << report.to_json() << '\n';
    } else if (*serve) {
      PredictionService service(load_bundle(serve_bundle));
      HttpServer server(service);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving " << family_name(service.bundle().family()) << " bundle on http://" << host << ':'
                << bound << std::endl;
      server.listen();
      g_server = nullptr;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const MissingFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const EmptyFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
