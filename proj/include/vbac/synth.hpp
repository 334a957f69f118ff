#pragma once

// Synthetic TOLAC cohorts with a known logistic ground truth, so model code
// can be checked against the Bayes ceiling.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vbac/cohort.hpp"
#include "vbac/util.hpp"

namespace vbac {

// Normal truncated to [lo, hi], parameterised by the moments of the
// truncated distribution; the underlying (mu, sigma) are solved for.
class TruncatedNormal {
 public:
  static TruncatedNormal from_moments(double mean, double sd, double lo, double hi);
  static TruncatedNormal from_underlying(double mu, double sigma, double lo, double hi);

  double mean() const;
  double sd() const;
  double mass() const;  // P(lo <= X <= hi) under the underlying normal
  double sample(Rng& rng) const;

  double mu() const { return mu_; }
  double sigma() const { return sigma_; }

 private:
  double mu_ = 0, sigma_ = 1, lo_ = 0, hi_ = 0;
};

// Continuous predictor; `coefficient` acts on (x - mean) / sd.
struct NumericMarginal {
  std::string field;
  double mean;
  double sd;
  double min;
  double max;
  int decimals = 0;  // values are rounded to this many places
  double coefficient = 0;
  friend bool operator==(const NumericMarginal&, const NumericMarginal&) = default;
};

// Count predictor with an explicit distribution; the coefficient acts on the
// value standardised by the distribution's own mean and sd.
struct DiscreteMarginal {
  std::string field;
  std::vector<double> values;
  std::vector<double> probabilities;
  double coefficient = 0;

  double mean() const;
  double sd() const;
  friend bool operator==(const DiscreteMarginal&, const DiscreteMarginal&) = default;
};

struct CategoricalMarginal {
  std::string field;
  std::vector<std::string> levels;
  std::vector<double> probabilities;
  std::map<std::string, double> coefficients;  // missing levels contribute 0
  friend bool operator==(const CategoricalMarginal&, const CategoricalMarginal&) = default;
};

// coefficient * z(numeric) * [categorical == level]
struct Interaction {
  std::string numeric;
  std::string categorical;
  std::string level;
  double coefficient;
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct SynthConfig {
  std::size_t n = 200000;
  std::uint64_t seed = 0;
  double target_prevalence = 0.736;
  double prevalence_tolerance = 0.002;
  std::vector<NumericMarginal> numeric;
  std::vector<DiscreteMarginal> discrete;
  std::vector<CategoricalMarginal> categorical;
  std::vector<Interaction> interactions;

  void validate() const;
  SynthConfig without_signal() const;  // all coefficients zeroed

  static SynthConfig from_json_text(std::string_view text);
  static SynthConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// Marginals centred on the pooled cohort means and sds, with a
// BMI x gestational-diabetes interaction.
SynthConfig default_synth_config();

struct SynthCohort {
  std::vector<DeliveryRecord> records;
  std::vector<std::uint8_t> labels;
  std::vector<double> true_probability;
  double intercept = 0;

  LabeledCohort labeled(std::string source = "synthetic") const;
  // Identity-schema CSV plus a trailing true_probability column.
  std::string to_csv() const;
};

SynthCohort generate_cohort(const SynthConfig& config);

// Ground-truth log-odds of one record under `config` with intercept b0.
double true_logit(const SynthConfig& config, double intercept, const DeliveryRecord& record);

// AUC of the true probabilities against the sampled labels.
double bayes_auc(const SynthCohort& cohort);

}  // namespace vbac
