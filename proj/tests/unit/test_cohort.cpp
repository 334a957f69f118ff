#include <doctest.h>

#include "helpers.hpp"
#include "vbac/cohort.hpp"
#include "vbac/errors.hpp"

using namespace vbac;
using vbac::testing::eligible;

namespace {

const char* kHeader =
    "age,ga,bmi,bw,visits,interval,prior_cs,prior_lb,plural,race,edu,marital,payer,tobacco,pdm,gdm,pht,ght,"
    "eclamp,anemia,ivf,preterm,region,urban,place,tolac,method\n";

std::string row(const std::string& bmi, const std::string& method, const std::string& plural = "1") {
  return "31,39," + bmi + ",3200,12,36,1,1," + plural +
         ",white,college,married,private,N,N,N,N,N,N,N,N,N,south,metro,hospital,Y," + method + "\n";
}

NatalitySchema custom_schema() {
  const std::vector<std::pair<std::string, std::string>> map = {
      {"maternal_age", "age"},          {"gestational_age", "ga"},
      {"prepreg_bmi", "bmi"},           {"birth_weight", "bw"},
      {"prenatal_visits", "visits"},    {"interval_since_last_birth", "interval"},
      {"prior_cesareans", "prior_cs"},  {"prior_live_births", "prior_lb"},
      {"plurality", "plural"},          {"race_ethnicity", "race"},
      {"education", "edu"},             {"marital_status", "marital"},
      {"payer", "payer"},               {"tobacco_use", "tobacco"},
      {"prepreg_diabetes", "pdm"},      {"gestational_diabetes", "gdm"},
      {"prepreg_hypertension", "pht"},  {"gestational_hypertension", "ght"},
      {"eclampsia", "eclamp"},          {"anemia", "anemia"},
      {"infertility_treatment", "ivf"}, {"prior_preterm_birth", "preterm"},
      {"census_region", "region"},      {"urbanization", "urban"},
      {"delivery_place", "place"}};
  NatalitySchema s;
  for (const auto& [field, column] : map) s.fields[field] = ColumnSpec{column, {}};
  s.fields["prepreg_bmi"].not_stated = {"99.9"};
  s.tolac_attempted = {"tolac", {{"yes", {"Y"}}, {"no", {"N"}}}, {"U"}};
  s.delivery_method = {"method", {{"vbac", {"4"}}, {"repeat_cesarean", {"5"}}, {"other", {"1"}}}, {"9"}};
  return s;
}

CohortFilterConfig all_predictors() {
  CohortFilterConfig c;
  for (const auto& n : predictor_field_names())
    if (n != "plurality") c.predictors.push_back(n);
  return c;
}

}  // namespace

TEST_CASE("field names resolve both ways") {
  for (const auto& name : predictor_field_names()) {
    const auto f = find_field(name);
    REQUIRE(f);
    CHECK(field_name(*f) == name);
  }
  CHECK_FALSE(find_field("shoe_size"));
  CHECK(predictor_field_names().size() == kNumericFieldCount + kCategoricalFieldCount);
}

TEST_CASE("parsing a well-formed file keeps row order") {
  const std::string text = std::string(kHeader) + row("25.1", "4") + row("30.2", "5") + row("22.0", "4");
  const auto records = parse_natality_csv_text(text, custom_schema());
  REQUIRE(records.size() == 3);
  CHECK(*records[0][NumericField::kPrepregBmi] == 25.1);
  CHECK(*records[1][NumericField::kPrepregBmi] == 30.2);
  CHECK(*records[2][NumericField::kPrepregBmi] == 22.0);
  CHECK(records[1].delivery_method == DeliveryMethod::kRepeatCesarean);
  CHECK(*records[0][CategoricalField::kPayer] == "private");
}

TEST_CASE("sentinels and junk cells become not stated") {
  const std::string text = std::string(kHeader) + row("99.9", "4") + row("abc", "4") + row("-3", "4");
  const auto records = parse_natality_csv_text(text, custom_schema());
  for (const auto& r : records) CHECK_FALSE(r[NumericField::kPrepregBmi].has_value());
}

TEST_CASE("a missing mapped column is a schema error naming it") {
  std::string header = kHeader;
  header.replace(header.find(",method"), 7, ",outcome");
  try {
    parse_natality_csv_text(header + row("25", "4"), custom_schema());
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.column() == "method");
    CHECK(e.field() == "delivery_method");
  }
}

TEST_CASE("missing and empty files are distinct errors") {
  const auto dir = vbac::testing::scratch_dir("cohort-files");
  CHECK_THROWS_AS(parse_natality_csv(dir / "nope.csv", identity_schema()), MissingFileError);
  write_file(dir / "empty.csv", "");
  CHECK_THROWS_AS(parse_natality_csv(dir / "empty.csv", identity_schema()), EmptyFileError);
}

TEST_CASE("schema JSON round-trips and rejects unknown fields") {
  const auto s = custom_schema();
  const auto back = NatalitySchema::from_json_text(s.to_json_text());
  CHECK(back.to_json_text() == s.to_json_text());
  CHECK_THROWS_AS(NatalitySchema::from_json_text(R"({"fields": {"shoe_size": {"column": "x"}}})"), ConfigError);
  CHECK_THROWS_AS(NatalitySchema::from_json_text("{"), ConfigError);
}

TEST_CASE("filter funnel: one twin among five") {
  std::vector<DeliveryRecord> records(5, eligible());
  records[2][NumericField::kPlurality] = 2;
  const auto [kept, report] = apply_cohort_filter(records, all_predictors());
  CHECK(kept.size() == 4);
  std::vector<std::size_t> counts;
  for (const auto& s : report.steps) counts.push_back(s.remaining);
  CHECK(counts == std::vector<std::size_t>{5, 4, 4, 4, 4});
  CHECK(report.to_tsv() == "input\t5\nsingleton\t4\nprior_cesareans\t4\ntolac_attempted\t4\ncomplete_case\t4\n");
}

TEST_CASE("filter steps each remove their own records") {
  std::vector<DeliveryRecord> records(6, eligible());
  records[0][NumericField::kPriorCesareans] = 3;
  records[1].tolac_attempted = TolacStatus::kNo;
  records[2].tolac_attempted = TolacStatus::kNotStated;
  records[3][CategoricalField::kAnemia] = std::nullopt;
  records[4][NumericField::kPrepregBmi] = std::nullopt;
  const auto [kept, report] = apply_cohort_filter(records, all_predictors());
  CHECK(kept.size() == 1);
  CHECK(report.steps[2].remaining == 5);  // prior cesarean = 3 out at step 2
  CHECK(report.steps[3].remaining == 3);
  CHECK(report.steps[4].remaining == 1);
  CHECK(kept[0] == records[5]);
}

TEST_CASE("filter is idempotent and its report is consistent") {
  std::vector<DeliveryRecord> records;
  for (int i = 0; i < 40; ++i) {
    auto r = eligible(i % 3 != 0);
    if (i % 7 == 0) r[NumericField::kPlurality] = 2;
    if (i % 5 == 0) r[NumericField::kBirthWeight] = std::nullopt;
    records.push_back(r);
  }
  const auto [once, r1] = apply_cohort_filter(records, all_predictors());
  const auto [twice, r2] = apply_cohort_filter(once, all_predictors());
  CHECK(once == twice);
  CHECK(r1.steps.back().remaining == once.size());
  for (const auto& s : r2.steps) CHECK(s.remaining == once.size());
  for (std::size_t i = 1; i < r1.steps.size(); ++i) CHECK(r1.steps[i].remaining <= r1.steps[i - 1].remaining);
}

TEST_CASE("filter requires a predictor list") {
  CHECK_THROWS_AS(apply_cohort_filter({eligible()}, CohortFilterConfig{}), ConfigError);
  CohortFilterConfig bad;
  bad.predictors = {"shoe_size"};
  CHECK_THROWS_AS(apply_cohort_filter({eligible()}, bad), ConfigError);
}

TEST_CASE("labels follow the delivery method") {
  auto cohort = assign_labels({eligible(true), eligible(false), eligible(true)});
  CHECK(cohort.labels == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(cohort.size() == cohort.labels.size());

  auto other = eligible();
  other.delivery_method = DeliveryMethod::kOther;
  try {
    assign_labels({eligible(), other});
    FAIL("expected LabelError");
  } catch (const LabelError& e) {
    CHECK(e.row() == 1);
  }
}

TEST_CASE("cohort cache round-trips and detects corruption") {
  std::vector<DeliveryRecord> records;
  for (int i = 0; i < 25; ++i) {
    auto r = eligible(i % 4 != 0);
    r[NumericField::kPrepregBmi] = 20 + 0.1 * i;
    r[CategoricalField::kPayer] = i % 3 ? "medicaid" : "private";
    if (i == 3) r[CategoricalField::kEducation] = std::nullopt;
    records.push_back(r);
  }
  const auto cohort = assign_labels(records, Provenance{{"a.csv", "b.csv"}, "abc123"});
  const std::string bytes = serialize_cohort(cohort);
  CHECK(deserialize_cohort(bytes) == cohort);
  CHECK(serialize_cohort(deserialize_cohort(bytes)) == bytes);

  std::string bad = bytes;
  bad[bad.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(deserialize_cohort(bad), ChecksumError);
  CHECK_THROWS_AS(deserialize_cohort(bytes.substr(0, bytes.size() - 10)), FormatError);
  CHECK_THROWS_AS(deserialize_cohort("NOTACOHORTFILE_________________________________"), FormatError);

  const auto dir = vbac::testing::scratch_dir("cohort-cache");
  write_cohort_cache(dir / "c.bin", cohort);
  CHECK(read_cohort_cache(dir / "c.bin") == cohort);
}

TEST_CASE("identity CSV writer round-trips through the identity schema") {
  std::vector<DeliveryRecord> records{eligible(true), eligible(false)};
  records[1][NumericField::kPrepregBmi] = 31.7;
  records[1][CategoricalField::kMaritalStatus] = "unmarried, separated";
  const auto back = parse_natality_csv_text(to_natality_csv(records), identity_schema());
  CHECK(back == records);
}

TEST_CASE("filter hash tracks the config") {
  auto a = all_predictors();
  auto b = a;
  CHECK(a.hash() == b.hash());
  b.allowed_prior_cesareans = {1};
  CHECK(a.hash() != b.hash());
}
