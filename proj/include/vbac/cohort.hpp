#pragma once

// Natality records, the inclusion funnel and outcome labelling.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vbac {

enum class NumericField : std::uint8_t {
  kMaternalAge,
  kGestationalAge,
  kPrepregBmi,
  kBirthWeight,
  kPrenatalVisits,
  kIntervalSinceLastBirth,
  kPriorCesareans,
  kPriorLiveBirths,
  kPlurality,
};
inline constexpr std::size_t kNumericFieldCount = 9;

enum class CategoricalField : std::uint8_t {
  kRaceEthnicity,
  kEducation,
  kMaritalStatus,
  kPayer,
  kTobaccoUse,
  kPrepregDiabetes,
  kGestationalDiabetes,
  kPrepregHypertension,
  kGestationalHypertension,
  kEclampsia,
  kAnemia,
  kInfertilityTreatment,
  kPriorPretermBirth,
  kCensusRegion,
  kUrbanization,
  kDeliveryPlace,
};
inline constexpr std::size_t kCategoricalFieldCount = 16;

enum class TolacStatus : std::uint8_t { kNotStated, kYes, kNo };
enum class DeliveryMethod : std::uint8_t { kNotStated, kVbac, kRepeatCesarean, kOther };

// A predictor addressed by its logical (snake_case) name.
struct FieldRef {
  enum class Kind : std::uint8_t { kNumeric, kCategorical };
  Kind kind;
  std::uint8_t index;

  bool numeric() const noexcept { return kind == Kind::kNumeric; }
  friend bool operator==(const FieldRef&, const FieldRef&) = default;
};

std::string_view field_name(NumericField f);
std::string_view field_name(CategoricalField f);
std::string_view field_name(FieldRef f);
std::optional<FieldRef> find_field(std::string_view name);
// Every addressable predictor name, numeric fields first.
const std::vector<std::string>& predictor_field_names();

// One natality row. std::nullopt is the "not stated" value for every field.
struct DeliveryRecord {
  std::array<std::optional<double>, kNumericFieldCount> numeric{};
  std::array<std::optional<std::string>, kCategoricalFieldCount> categorical{};
  TolacStatus tolac_attempted = TolacStatus::kNotStated;
  DeliveryMethod delivery_method = DeliveryMethod::kNotStated;

  std::optional<double>& operator[](NumericField f) { return numeric[static_cast<std::size_t>(f)]; }
  const std::optional<double>& operator[](NumericField f) const {
    return numeric[static_cast<std::size_t>(f)];
  }
  std::optional<std::string>& operator[](CategoricalField f) {
    return categorical[static_cast<std::size_t>(f)];
  }
  const std::optional<std::string>& operator[](CategoricalField f) const {
    return categorical[static_cast<std::size_t>(f)];
  }

  bool stated(FieldRef f) const;

  friend bool operator==(const DeliveryRecord&, const DeliveryRecord&) = default;
};

// How one logical field is read from the CSV.
struct ColumnSpec {
  std::string column;
  std::vector<std::string> not_stated;  // sentinel cell values
};

struct EnumColumnSpec {
  std::string column;
  std::map<std::string, std::vector<std::string>> values;  // outcome name -> cell values
  std::vector<std::string> not_stated;
};

// Logical field -> CSV column mapping, loaded from a JSON schema file.
struct NatalitySchema {
  std::map<std::string, ColumnSpec> fields;  // keyed by predictor field name
  EnumColumnSpec tolac_attempted;            // values: "yes", "no"
  EnumColumnSpec delivery_method;            // values: "vbac", "repeat_cesarean", "other"

  static NatalitySchema from_json_text(std::string_view text);
  static NatalitySchema load(const std::filesystem::path& path);
  std::string to_json_text() const;
};

// Schema whose column names equal the logical field names; this is what
// the synthetic generator writes.
NatalitySchema identity_schema();

std::vector<DeliveryRecord> parse_natality_csv(const std::filesystem::path& path,
                                               const NatalitySchema& schema);
std::vector<DeliveryRecord> parse_natality_csv_text(std::string_view text,
                                                    const NatalitySchema& schema,
                                                    std::string_view source_name = "<memory>");

// Writes records in the identity schema; tolac and outcome columns use the
// identity codes.
std::string to_natality_csv(const std::vector<DeliveryRecord>& records);

struct CohortFilterConfig {
  double required_plurality = 1;
  std::vector<double> allowed_prior_cesareans{1, 2};
  std::vector<std::string> predictors;  // complete-case list

  std::string hash() const;
};

struct FunnelStep {
  std::string name;
  std::size_t remaining;
  friend bool operator==(const FunnelStep&, const FunnelStep&) = default;
};

struct CohortFilterReport {
  std::vector<FunnelStep> steps;

  std::string to_tsv() const;  // "step<TAB>count" lines
  friend bool operator==(const CohortFilterReport&, const CohortFilterReport&) = default;
};

// Applies, in order: singleton, prior cesarean count, TOLAC attempted,
// complete case over the predictor list.
std::pair<std::vector<DeliveryRecord>, CohortFilterReport> apply_cohort_filter(
    const std::vector<DeliveryRecord>& records, const CohortFilterConfig& config);

struct Provenance {
  std::vector<std::string> sources;
  std::string filter_hash;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct LabeledCohort {
  std::vector<DeliveryRecord> records;
  std::vector<std::uint8_t> labels;  // 1 = VBAC, 0 = repeat cesarean
  Provenance provenance;

  std::size_t size() const noexcept { return records.size(); }
  friend bool operator==(const LabeledCohort&, const LabeledCohort&) = default;
};

LabeledCohort assign_labels(std::vector<DeliveryRecord> records, Provenance provenance = {});

// Columnar little-endian cache with magic "VBACCOHT", versioned and
// checksummed.
std::string serialize_cohort(const LabeledCohort& cohort);
LabeledCohort deserialize_cohort(std::string_view bytes);
void write_cohort_cache(const std::filesystem::path& path, const LabeledCohort& cohort);
LabeledCohort read_cohort_cache(const std::filesystem::path& path);

}  // namespace vbac
