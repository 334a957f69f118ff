#include "vbac/synth.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "vbac/errors.hpp"
#include "vbac/eval.hpp"

namespace vbac {

namespace {

constexpr std::size_t kBlockRows = 8192;

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI); }
double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::size_t draw_index(std::span<const double> probabilities, double u) {
  double acc = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    acc += probabilities[i];
    if (u < acc) return i;
  }
  return probabilities.size() - 1;
}

double round_to(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(x * scale) / scale;
}

void check_distribution(const std::string& field, std::span<const double> p, std::size_t expected) {
  if (p.size() != expected || p.empty()) throw ConfigError("synth: " + field + " needs one probability per value");
  double total = 0;
  for (double v : p) {
    if (!(v >= 0)) throw ConfigError("synth: " + field + " has a negative probability");
    total += v;
  }
  if (std::abs(total - 1) > 1e-9) throw ConfigError("synth: " + field + " probabilities must sum to 1");
}

std::size_t numeric_slot(const std::string& name) {
  const auto f = find_field(name);
  if (!f || !f->numeric()) throw ConfigError("synth: '" + name + "' is not a numeric field");
  return f->index;
}

std::size_t categorical_slot(const std::string& name) {
  const auto f = find_field(name);
  if (!f || f->numeric()) throw ConfigError("synth: '" + name + "' is not a categorical field");
  return f->index;
}

// Resolved view of a config, so the per-row loop does no name lookups.
struct Plan {
  struct Num {
    std::size_t slot;
    TruncatedNormal dist;
    int decimals;
    double mean, sd, coefficient;
    double lo, hi;
  };
  struct Disc {
    std::size_t slot;
    const DiscreteMarginal* m;
    double mean, sd;
  };
  struct Cat {
    std::size_t slot;
    const CategoricalMarginal* m;
    std::vector<double> level_coef;
  };
  struct Inter {
    std::size_t num_slot;
    double mean, sd;
    std::size_t cat_slot;
    std::string level;
    double coefficient;
  };
  std::vector<Num> num;
  std::vector<Disc> disc;
  std::vector<Cat> cat;
  std::vector<Inter> inter;

  explicit Plan(const SynthConfig& c) {
    for (const auto& m : c.numeric)
      num.push_back({numeric_slot(m.field), TruncatedNormal::from_moments(m.mean, m.sd, m.min, m.max), m.decimals, m.mean,
                     m.sd, m.coefficient, m.min, m.max});
    for (const auto& m : c.discrete) disc.push_back({numeric_slot(m.field), &m, m.mean(), m.sd()});
    for (const auto& m : c.categorical) {
      Cat k{categorical_slot(m.field), &m, {}};
      for (const auto& level : m.levels) {
        const auto it = m.coefficients.find(level);
        k.level_coef.push_back(it == m.coefficients.end() ? 0.0 : it->second);
      }
      cat.push_back(std::move(k));
    }
    for (const auto& i : c.interactions) {
      double mean = 0, sd = 1;
      bool found = false;
      for (const auto& m : c.numeric)
        if (m.field == i.numeric) mean = m.mean, sd = m.sd, found = true;
      for (const auto& m : c.discrete)
        if (m.field == i.numeric) mean = m.mean(), sd = m.sd(), found = true;
      if (!found) throw ConfigError("synth: interaction names unconfigured field '" + i.numeric + "'");
      inter.push_back({numeric_slot(i.numeric), mean, sd, categorical_slot(i.categorical), i.level, i.coefficient});
    }
  }

  // Linear predictor without the intercept.
  double signal(const DeliveryRecord& r) const {
    double s = 0;
    for (const auto& n : num)
      if (n.coefficient != 0) s += n.coefficient * (*r.numeric[n.slot] - n.mean) / n.sd;
    for (const auto& d : disc)
      if (d.m->coefficient != 0 && d.sd > 0) s += d.m->coefficient * (*r.numeric[d.slot] - d.mean) / d.sd;
    for (const auto& c : cat) {
      const auto& value = *r.categorical[c.slot];
      for (std::size_t l = 0; l < c.m->levels.size(); ++l)
        if (c.m->levels[l] == value) s += c.level_coef[l];
    }
    for (const auto& i : inter)
      if (*r.categorical[i.cat_slot] == i.level) s += i.coefficient * (*r.numeric[i.num_slot] - i.mean) / i.sd;
    return s;
  }

  DeliveryRecord draw(Rng& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    DeliveryRecord r;
    r[NumericField::kPlurality] = 1.0;
    r.tolac_attempted = TolacStatus::kYes;
    for (const auto& n : num) r.numeric[n.slot] = std::clamp(round_to(n.dist.sample(rng), n.decimals), n.lo, n.hi);
    for (const auto& d : disc) r.numeric[d.slot] = d.m->values[draw_index(d.m->probabilities, unit(rng))];
    for (const auto& c : cat) r.categorical[c.slot] = c.m->levels[draw_index(c.m->probabilities, unit(rng))];
    return r;
  }
};

}  // namespace

TruncatedNormal TruncatedNormal::from_underlying(double mu, double sigma, double lo, double hi) {
  if (!(sigma > 0) || !(lo < hi)) throw ConfigError("truncated normal needs sigma > 0 and lo < hi");
  TruncatedNormal t;
  t.mu_ = mu;
  t.sigma_ = sigma;
  t.lo_ = lo;
  t.hi_ = hi;
  return t;
}

double TruncatedNormal::mass() const { return Phi((hi_ - mu_) / sigma_) - Phi((lo_ - mu_) / sigma_); }

double TruncatedNormal::mean() const {
  const double a = (lo_ - mu_) / sigma_, b = (hi_ - mu_) / sigma_;
  return mu_ + sigma_ * (phi(a) - phi(b)) / mass();
}

double TruncatedNormal::sd() const {
  const double a = (lo_ - mu_) / sigma_, b = (hi_ - mu_) / sigma_;
  const double z = mass();
  const double shift = (phi(a) - phi(b)) / z;
  // phi(+-inf) * inf is taken as 0.
  const double ta = std::isfinite(a) ? a * phi(a) : 0.0;
  const double tb = std::isfinite(b) ? b * phi(b) : 0.0;
  return sigma_ * std::sqrt(std::max(0.0, 1 + (ta - tb) / z - shift * shift));
}

TruncatedNormal TruncatedNormal::from_moments(double mean, double sd, double lo, double hi) {
  if (!(sd > 0)) throw ConfigError("truncated normal needs sd > 0");
  if (!(lo < mean && mean < hi)) throw ConfigError("truncated normal mean must lie strictly inside its bounds");
  TruncatedNormal t = from_underlying(mean, sd, lo, hi);
  for (int iter = 0; iter < 5000; ++iter) {
    const double m = t.mean(), s = t.sd();
    if (std::abs(m - mean) < 1e-10 * sd && std::abs(s - sd) < 1e-10 * sd) return t;
    const double mu = t.mu_ + (mean - m);
    const double sigma = t.sigma_ * sd / s;
    if (!std::isfinite(mu) || !(sigma > 0) || sigma > 1e6 * sd) break;
    t = from_underlying(mu, sigma, lo, hi);
  }
  throw ConfigError("no truncated normal on [" + format_double(lo) + ", " + format_double(hi) + "] has mean " +
                    format_double(mean) + " and sd " + format_double(sd));
}

double TruncatedNormal::sample(Rng& rng) const {
  if (mass() < 1e-4) throw ConfigError("truncated normal keeps too little mass for rejection sampling");
  std::normal_distribution<double> normal(mu_, sigma_);
  while (true) {
    const double x = normal(rng);
    if (x >= lo_ && x <= hi_) return x;
  }
}

double DiscreteMarginal::mean() const {
  double m = 0;
  for (std::size_t i = 0; i < values.size(); ++i) m += values[i] * probabilities[i];
  return m;
}

double DiscreteMarginal::sd() const {
  const double m = mean();
  double v = 0;
  for (std::size_t i = 0; i < values.size(); ++i) v += probabilities[i] * (values[i] - m) * (values[i] - m);
  return std::sqrt(v);
}

void SynthConfig::validate() const {
  if (n == 0) throw ConfigError("synth: n must be positive");
  if (!(target_prevalence > 0 && target_prevalence < 1)) throw ConfigError("synth: prevalence must lie in (0, 1)");
  if (!(prevalence_tolerance > 0)) throw ConfigError("synth: prevalence tolerance must be positive");
  std::set<std::string> seen;
  auto claim = [&](const std::string& f) {
    if (!find_field(f)) throw ConfigError("synth: unknown field '" + f + "'");
    if (f == "plurality") throw ConfigError("synth: plurality is fixed at 1");
    if (!seen.insert(f).second) throw ConfigError("synth: field '" + f + "' configured twice");
  };
  for (const auto& m : numeric) {
    claim(m.field);
    numeric_slot(m.field);
    if (!(m.sd > 0)) throw ConfigError("synth: " + m.field + " sd must be positive");
    if (m.min < 0) throw ConfigError("synth: " + m.field + " must be non-negative");
    if (m.decimals < 0 || m.decimals > 6) throw ConfigError("synth: " + m.field + " decimals must lie in [0, 6]");
  }
  for (const auto& m : discrete) {
    claim(m.field);
    numeric_slot(m.field);
    check_distribution(m.field, m.probabilities, m.values.size());
    for (double v : m.values)
      if (v < 0) throw ConfigError("synth: " + m.field + " values must be non-negative");
  }
  for (const auto& m : categorical) {
    claim(m.field);
    categorical_slot(m.field);
    check_distribution(m.field, m.probabilities, m.levels.size());
    if (std::set<std::string>(m.levels.begin(), m.levels.end()).size() != m.levels.size())
      throw ConfigError("synth: " + m.field + " repeats a level");
    for (const auto& [level, coef] : m.coefficients)
      if (std::find(m.levels.begin(), m.levels.end(), level) == m.levels.end())
        throw ConfigError("synth: coefficient for unknown level '" + level + "' of " + m.field);
  }
  for (const auto& name : predictor_field_names())
    if (name != "plurality" && !seen.count(name)) throw ConfigError("synth: field '" + name + "' is not configured");
  for (const auto& i : interactions) {
    categorical_slot(i.categorical);
    const auto it = std::find_if(categorical.begin(), categorical.end(),
                                 [&](const CategoricalMarginal& m) { return m.field == i.categorical; });
    if (it == categorical.end() || std::find(it->levels.begin(), it->levels.end(), i.level) == it->levels.end())
      throw ConfigError("synth: interaction level '" + i.level + "' is not a level of " + i.categorical);
  }
  Plan plan(*this);  // resolves every distribution
}

SynthConfig SynthConfig::without_signal() const {
  SynthConfig c = *this;
  for (auto& m : c.numeric) m.coefficient = 0;
  for (auto& m : c.discrete) m.coefficient = 0;
  for (auto& m : c.categorical) m.coefficients.clear();
  c.interactions.clear();
  return c;
}

std::string SynthConfig::to_json_text() const {
  nlohmann::ordered_json j;
  j["n"] = n;
  j["seed"] = seed;
  j["target_prevalence"] = target_prevalence;
  j["prevalence_tolerance"] = prevalence_tolerance;
  j["numeric"] = nlohmann::ordered_json::array();
  for (const auto& m : numeric)
    j["numeric"].push_back({{"field", m.field}, {"mean", m.mean}, {"sd", m.sd}, {"min", m.min}, {"max", m.max},
                            {"decimals", m.decimals}, {"coefficient", m.coefficient}});
  j["discrete"] = nlohmann::ordered_json::array();
  for (const auto& m : discrete)
    j["discrete"].push_back(
        {{"field", m.field}, {"values", m.values}, {"probabilities", m.probabilities}, {"coefficient", m.coefficient}});
  j["categorical"] = nlohmann::ordered_json::array();
  for (const auto& m : categorical) {
    nlohmann::ordered_json coefs = nlohmann::ordered_json::object();
    for (const auto& [level, c] : m.coefficients) coefs[level] = c;
    j["categorical"].push_back(
        {{"field", m.field}, {"levels", m.levels}, {"probabilities", m.probabilities}, {"coefficients", coefs}});
  }
  j["interactions"] = nlohmann::ordered_json::array();
  for (const auto& i : interactions)
    j["interactions"].push_back(
        {{"numeric", i.numeric}, {"categorical", i.categorical}, {"level", i.level}, {"coefficient", i.coefficient}});
  return j.dump(2) + "\n";
}

SynthConfig SynthConfig::from_json_text(std::string_view text) {
  SynthConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("synth profile: expected a JSON object");
    static const std::set<std::string> known{"n", "seed", "target_prevalence", "prevalence_tolerance", "numeric",
                                             "discrete", "categorical", "interactions"};
    for (const auto& [key, _] : j.items())
      if (!known.count(key)) throw ConfigError("synth profile: unknown key '" + key + "'");
    c.n = j.value("n", c.n);
    c.seed = j.value("seed", c.seed);
    c.target_prevalence = j.value("target_prevalence", c.target_prevalence);
    c.prevalence_tolerance = j.value("prevalence_tolerance", c.prevalence_tolerance);
    for (const auto& m : j.value("numeric", nlohmann::json::array()))
      c.numeric.push_back({m.at("field").get<std::string>(), m.at("mean").get<double>(), m.at("sd").get<double>(),
                           m.at("min").get<double>(), m.at("max").get<double>(), m.value("decimals", 0),
                           m.value("coefficient", 0.0)});
    for (const auto& m : j.value("discrete", nlohmann::json::array()))
      c.discrete.push_back({m.at("field").get<std::string>(), m.at("values").get<std::vector<double>>(),
                            m.at("probabilities").get<std::vector<double>>(), m.value("coefficient", 0.0)});
    for (const auto& m : j.value("categorical", nlohmann::json::array()))
      c.categorical.push_back({m.at("field").get<std::string>(), m.at("levels").get<std::vector<std::string>>(),
                               m.at("probabilities").get<std::vector<double>>(),
                               m.value("coefficients", std::map<std::string, double>{})});
    for (const auto& i : j.value("interactions", nlohmann::json::array()))
      c.interactions.push_back({i.at("numeric").get<std::string>(), i.at("categorical").get<std::string>(),
                                i.at("level").get<std::string>(), i.at("coefficient").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth profile: ") + e.what());
  }
  c.validate();
  return c;
}

SynthConfig SynthConfig::load(const std::filesystem::path& path) { return from_json_text(read_file(path)); }

SynthConfig default_synth_config() {
  SynthConfig c;
  c.seed = 20170101;
  c.numeric = {
      {"maternal_age", 30.95, 5.17, 15, 50, 0, -0.06},
      {"gestational_age", 38.59, 2.59, 24, 44, 0, 0.12},
      {"prepreg_bmi", 27.71, 6.66, 15, 65, 1, -0.38},
      {"birth_weight", 3300.6, 583.0, 500, 5500, 0, -0.12},
      {"prenatal_visits", 10.79, 4.37, 0, 40, 0, -0.10},
      {"interval_since_last_birth", 48.27, 34.8, 6, 300, 0, -0.25},
  };
  c.discrete = {
      {"prior_cesareans", {1, 2}, {0.88, 0.12}, -0.31},
      {"prior_live_births", {1, 2, 3, 4, 5}, {0.50, 0.28, 0.13, 0.06, 0.03}, 0.56},
  };
  c.categorical = {
      {"race_ethnicity", {"asian", "black", "hispanic", "other", "white"}, {0.06, 0.16, 0.24, 0.04, 0.50},
       {{"asian", -0.12}, {"black", -0.25}, {"hispanic", -0.06}}},
      {"education", {"bachelor", "graduate", "hs_or_less", "some_college"}, {0.20, 0.12, 0.38, 0.30},
       {{"bachelor", 0.25}, {"graduate", 0.31}, {"some_college", 0.06}}},
      {"marital_status", {"married", "unmarried"}, {0.62, 0.38}, {{"married", 0.06}}},
      {"payer", {"medicaid", "other", "private", "self_pay"}, {0.42, 0.05, 0.50, 0.03},
       {{"medicaid", -0.19}, {"self_pay", 0.12}}},
      {"tobacco_use", {"N", "Y"}, {0.94, 0.06}, {{"Y", 0.06}}},
      {"prepreg_diabetes", {"N", "Y"}, {0.98, 0.02}, {{"Y", -0.50}}},
      {"gestational_diabetes", {"N", "Y"}, {0.90, 0.10}, {{"Y", -0.38}}},
      {"prepreg_hypertension", {"N", "Y"}, {0.96, 0.04}, {{"Y", -0.44}}},
      {"gestational_hypertension", {"N", "Y"}, {0.92, 0.08}, {{"Y", -0.38}}},
      {"eclampsia", {"N", "Y"}, {0.997, 0.003}, {{"Y", -0.38}}},
      {"anemia", {"N", "Y"}, {0.95, 0.05}, {{"Y", -0.12}}},
      {"infertility_treatment", {"N", "Y"}, {0.985, 0.015}, {{"Y", -0.25}}},
      {"prior_preterm_birth", {"N", "Y"}, {0.93, 0.07}, {{"Y", 0.31}}},
      {"census_region", {"midwest", "northeast", "south", "west"}, {0.21, 0.16, 0.39, 0.24}, {{"west", 0.06}}},
      {"urbanization", {"metro", "nonmetro"}, {0.86, 0.14}, {}},
      {"delivery_place", {"hospital", "other"}, {0.99, 0.01}, {{"other", 0.38}}},
  };
  // Strong enough that main-effects models leave measurable headroom.
  c.interactions = {{"prepreg_bmi", "gestational_diabetes", "Y", -2.0}};
  return c;
}

double true_logit(const SynthConfig& config, double intercept, const DeliveryRecord& record) {
  return intercept + Plan(config).signal(record);
}

SynthCohort generate_cohort(const SynthConfig& config) {
  config.validate();
  const Plan plan(config);
  SynthCohort out;
  out.records.reserve(config.n);
  std::vector<double> signal;
  signal.reserve(config.n);
  // Row blocks draw from independent substreams.
  for (std::size_t start = 0, block = 0; start < config.n; start += kBlockRows, ++block) {
    Rng rng(derive_seed(config.seed, "synth/rows/" + std::to_string(block)));
    const std::size_t end = std::min(config.n, start + kBlockRows);
    for (std::size_t i = start; i < end; ++i) {
      out.records.push_back(plan.draw(rng));
      signal.push_back(plan.signal(out.records.back()));
    }
  }

  auto mean_probability = [&](double b0) {
    double s = 0;
    for (double v : signal) s += sigmoid(b0 + v);
    return s / static_cast<double>(signal.size());
  };
  double lo = -40, hi = 40;
  if (mean_probability(lo) > config.target_prevalence || mean_probability(hi) < config.target_prevalence)
    throw ConfigError("synth: target prevalence is unreachable with these coefficients");
  for (int iter = 0; iter < 200 && hi - lo > 1e-13; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (mean_probability(mid) < config.target_prevalence ? lo : hi) = mid;
  }
  out.intercept = 0.5 * (lo + hi);
  if (std::abs(mean_probability(out.intercept) - config.target_prevalence) > config.prevalence_tolerance)
    throw ConfigError("synth: intercept search missed the target prevalence");

  out.true_probability.reserve(config.n);
  out.labels.reserve(config.n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t start = 0, block = 0; start < config.n; start += kBlockRows, ++block) {
    Rng rng(derive_seed(config.seed, "synth/labels/" + std::to_string(block)));
    const std::size_t end = std::min(config.n, start + kBlockRows);
    for (std::size_t i = start; i < end; ++i) {
      const double p = sigmoid(out.intercept + signal[i]);
      const std::uint8_t y = unit(rng) < p ? 1 : 0;
      out.true_probability.push_back(p);
      out.labels.push_back(y);
      out.records[i].delivery_method = y ? DeliveryMethod::kVbac : DeliveryMethod::kRepeatCesarean;
    }
  }
  return out;
}

LabeledCohort SynthCohort::labeled(std::string source) const {
  LabeledCohort c;
  c.records = records;
  c.labels = labels;
  c.provenance.sources = {std::move(source)};
  return c;
}

std::string SynthCohort::to_csv() const {
  const auto& names = predictor_field_names();
  std::string out;
  for (const auto& name : names) out += name + ",";
  out += "tolac_attempted,delivery_method,true_probability\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    for (const auto& name : names) {
      const auto f = *find_field(name);
      if (f.numeric()) {
        const auto& v = r.numeric[f.index];
        if (v) out += format_double(*v);
      } else {
        const auto& v = r.categorical[f.index];
        if (v) out += csv_escape(*v);
      }
      out += ',';
    }
    out += r.tolac_attempted == TolacStatus::kYes ? "Y," : "N,";
    out += r.delivery_method == DeliveryMethod::kVbac ? "vbac," : "repeat_cesarean,";
    out += format_double(true_probability[i]) + "\n";
  }
  return out;
}

double bayes_auc(const SynthCohort& cohort) { return roc_auc(cohort.true_probability, cohort.labels); }

}  // namespace vbac
