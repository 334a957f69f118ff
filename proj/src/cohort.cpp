#include "vbac/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "vbac/errors.hpp"
#include "vbac/util.hpp"

namespace vbac {

namespace {

constexpr std::array<std::string_view, kNumericFieldCount> kNumericNames{
    "maternal_age",      "gestational_age",           "prepreg_bmi",
    "birth_weight",      "prenatal_visits",           "interval_since_last_birth",
    "prior_cesareans",   "prior_live_births",         "plurality",
};

constexpr std::array<std::string_view, kCategoricalFieldCount> kCategoricalNames{
    "race_ethnicity",       "education",
    "marital_status",       "payer",
    "tobacco_use",          "prepreg_diabetes",
    "gestational_diabetes", "prepreg_hypertension",
    "gestational_hypertension", "eclampsia",
    "anemia",               "infertility_treatment",
    "prior_preterm_birth",  "census_region",
    "urbanization",         "delivery_place",
};

constexpr std::string_view kCohortMagic = "VBACCOHT";
constexpr std::uint32_t kCohortVersion = 1;
constexpr std::uint32_t kNoLevel = 0xFFFFFFFFu;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool contains(const std::vector<std::string>& values, std::string_view v) {
  return std::find(values.begin(), values.end(), v) != values.end();
}

std::optional<double> parse_quantity(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0;
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value) || value < 0) return std::nullopt;
  return value;
}

ColumnSpec column_spec_from_json(const nlohmann::json& j) {
  ColumnSpec spec;
  spec.column = j.at("column").get<std::string>();
  if (j.contains("not_stated")) spec.not_stated = j.at("not_stated").get<std::vector<std::string>>();
  return spec;
}

EnumColumnSpec enum_spec_from_json(const nlohmann::json& j, std::initializer_list<const char*> keys) {
  EnumColumnSpec spec;
  spec.column = j.at("column").get<std::string>();
  for (const char* key : keys)
    spec.values[key] = j.contains(key) ? j.at(key).get<std::vector<std::string>>()
                                       : std::vector<std::string>{};
  if (j.contains("not_stated")) spec.not_stated = j.at("not_stated").get<std::vector<std::string>>();
  return spec;
}

nlohmann::json enum_spec_to_json(const EnumColumnSpec& spec) {
  nlohmann::json j;
  j["column"] = spec.column;
  for (const auto& [k, v] : spec.values) j[k] = v;
  j["not_stated"] = spec.not_stated;
  return j;
}

}  // namespace

std::string_view field_name(NumericField f) { return kNumericNames[static_cast<std::size_t>(f)]; }
std::string_view field_name(CategoricalField f) {
  return kCategoricalNames[static_cast<std::size_t>(f)];
}
std::string_view field_name(FieldRef f) {
  return f.numeric() ? kNumericNames[f.index] : kCategoricalNames[f.index];
}

std::optional<FieldRef> find_field(std::string_view name) {
  for (std::size_t i = 0; i < kNumericNames.size(); ++i)
    if (kNumericNames[i] == name)
      return FieldRef{FieldRef::Kind::kNumeric, static_cast<std::uint8_t>(i)};
  for (std::size_t i = 0; i < kCategoricalNames.size(); ++i)
    if (kCategoricalNames[i] == name)
      return FieldRef{FieldRef::Kind::kCategorical, static_cast<std::uint8_t>(i)};
  return std::nullopt;
}

const std::vector<std::string>& predictor_field_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (auto n : kNumericNames) out.emplace_back(n);
    for (auto n : kCategoricalNames) out.emplace_back(n);
    return out;
  }();
  return names;
}

bool DeliveryRecord::stated(FieldRef f) const {
  return f.numeric() ? numeric[f.index].has_value() : categorical[f.index].has_value();
}

NatalitySchema NatalitySchema::from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema is not valid JSON: ") + e.what());
  }
  NatalitySchema schema;
  try {
    for (const auto& [name, spec] : j.at("fields").items()) {
      if (!find_field(name)) throw ConfigError("schema names unknown field '" + name + "'");
      schema.fields[name] = column_spec_from_json(spec);
    }
    schema.tolac_attempted = enum_spec_from_json(j.at("tolac_attempted"), {"yes", "no"});
    schema.delivery_method =
        enum_spec_from_json(j.at("delivery_method"), {"vbac", "repeat_cesarean", "other"});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed schema: ") + e.what());
  }
  for (const char* required : {"plurality", "prior_cesareans"})
    if (!schema.fields.contains(required))
      throw ConfigError(std::string("schema must map required field '") + required + "'");
  return schema;
}

NatalitySchema NatalitySchema::load(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

std::string NatalitySchema::to_json_text() const {
  nlohmann::json j;
  j["fields"] = nlohmann::json::object();
  for (const auto& [name, spec] : fields)
    j["fields"][name] = {{"column", spec.column}, {"not_stated", spec.not_stated}};
  j["tolac_attempted"] = enum_spec_to_json(tolac_attempted);
  j["delivery_method"] = enum_spec_to_json(delivery_method);
  return j.dump(2);
}

NatalitySchema identity_schema() {
  NatalitySchema schema;
  for (const auto& name : predictor_field_names()) schema.fields[name] = ColumnSpec{name, {}};
  schema.tolac_attempted.column = "tolac_attempted";
  schema.tolac_attempted.values = {{"yes", {"Y"}}, {"no", {"N"}}};
  schema.tolac_attempted.not_stated = {"U"};
  schema.delivery_method.column = "delivery_method";
  schema.delivery_method.values = {
      {"vbac", {"vbac"}}, {"repeat_cesarean", {"repeat_cesarean"}}, {"other", {"other"}}};
  schema.delivery_method.not_stated = {"U"};
  return schema;
}

std::vector<DeliveryRecord> parse_natality_csv(const std::filesystem::path& path,
                                               const NatalitySchema& schema) {
  if (!std::filesystem::exists(path)) throw MissingFileError(path.string());
  const std::string text = read_file(path);
  if (text.empty()) throw EmptyFileError(path.string());
  return parse_natality_csv_text(text, schema, path.string());
}

std::vector<DeliveryRecord> parse_natality_csv_text(std::string_view text,
                                                    const NatalitySchema& schema,
                                                    std::string_view source_name) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    return true;
  };

  std::string_view header_line;
  if (!next_line(header_line) || trim(header_line).empty())
    throw EmptyFileError(std::string(source_name));

  std::unordered_map<std::string, std::size_t> header;
  {
    const auto names = split_csv_line(header_line);
    for (std::size_t i = 0; i < names.size(); ++i) header.emplace(std::string(trim(names[i])), i);
  }
  auto column_index = [&](const std::string& field, const std::string& column) {
    auto it = header.find(column);
    if (it == header.end()) throw SchemaError(field, column);
    return it->second;
  };

  struct Bound {
    FieldRef field;
    std::size_t col;
    const ColumnSpec* spec;
  };
  std::vector<Bound> bound;
  for (const auto& [name, spec] : schema.fields)
    bound.push_back({*find_field(name), column_index(name, spec.column), &spec});
  const std::size_t tolac_col = column_index("tolac_attempted", schema.tolac_attempted.column);
  const std::size_t method_col = column_index("delivery_method", schema.delivery_method.column);

  auto values_of = [](const EnumColumnSpec& spec, const char* key) -> const std::vector<std::string>& {
    static const std::vector<std::string> kEmpty;
    auto it = spec.values.find(key);
    return it == spec.values.end() ? kEmpty : it->second;
  };
  const auto& tolac_yes = values_of(schema.tolac_attempted, "yes");
  const auto& tolac_no = values_of(schema.tolac_attempted, "no");
  const auto& vbac = values_of(schema.delivery_method, "vbac");
  const auto& repeat = values_of(schema.delivery_method, "repeat_cesarean");

  std::vector<DeliveryRecord> records;
  std::string_view line;
  while (next_line(line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    auto cell = [&](std::size_t col) -> std::string_view {
      return col < cells.size() ? trim(cells[col]) : std::string_view{};
    };
    DeliveryRecord rec;
    for (const auto& b : bound) {
      const auto value = cell(b.col);
      if (value.empty() || contains(b.spec->not_stated, value)) continue;
      if (b.field.numeric())
        rec.numeric[b.field.index] = parse_quantity(value);
      else
        rec.categorical[b.field.index] = std::string(value);
    }

    const auto tolac = cell(tolac_col);
    if (contains(tolac_yes, tolac))
      rec.tolac_attempted = TolacStatus::kYes;
    else if (contains(tolac_no, tolac))
      rec.tolac_attempted = TolacStatus::kNo;

    const auto method = cell(method_col);
    if (method.empty() || contains(schema.delivery_method.not_stated, method))
      rec.delivery_method = DeliveryMethod::kNotStated;
    else if (contains(vbac, method))
      rec.delivery_method = DeliveryMethod::kVbac;
    else if (contains(repeat, method))
      rec.delivery_method = DeliveryMethod::kRepeatCesarean;
    else
      rec.delivery_method = DeliveryMethod::kOther;

    records.push_back(std::move(rec));
  }
  return records;
}

std::string CohortFilterConfig::hash() const {
  nlohmann::json j;
  j["required_plurality"] = required_plurality;
  j["allowed_prior_cesareans"] = allowed_prior_cesareans;
  j["predictors"] = predictors;
  return sha256_hex(j.dump());
}

std::string CohortFilterReport::to_tsv() const {
  std::string out;
  for (const auto& s : steps) out += s.name + "\t" + std::to_string(s.remaining) + "\n";
  return out;
}

std::pair<std::vector<DeliveryRecord>, CohortFilterReport> apply_cohort_filter(
    const std::vector<DeliveryRecord>& records, const CohortFilterConfig& config) {
  if (config.predictors.empty()) throw ConfigError("cohort filter needs a non-empty predictor list");
  std::vector<FieldRef> predictors;
  for (const auto& name : config.predictors) {
    auto f = find_field(name);
    if (!f) throw ConfigError("unknown predictor '" + name + "'");
    predictors.push_back(*f);
  }

  using Pred = bool (*)(const DeliveryRecord&, const CohortFilterConfig&,
                        const std::vector<FieldRef>&);
  const std::array<std::pair<const char*, Pred>, 4> steps{{
      {"singleton",
       [](const DeliveryRecord& r, const CohortFilterConfig& c, const std::vector<FieldRef>&) {
         const auto& p = r[NumericField::kPlurality];
         return p && *p == c.required_plurality;
       }},
      {"prior_cesareans",
       [](const DeliveryRecord& r, const CohortFilterConfig& c, const std::vector<FieldRef>&) {
         const auto& pc = r[NumericField::kPriorCesareans];
         return pc && std::find(c.allowed_prior_cesareans.begin(), c.allowed_prior_cesareans.end(),
                                *pc) != c.allowed_prior_cesareans.end();
       }},
      {"tolac_attempted",
       [](const DeliveryRecord& r, const CohortFilterConfig&, const std::vector<FieldRef>&) {
         return r.tolac_attempted == TolacStatus::kYes;
       }},
      {"complete_case",
       [](const DeliveryRecord& r, const CohortFilterConfig&, const std::vector<FieldRef>& fs) {
         return std::all_of(fs.begin(), fs.end(), [&](FieldRef f) { return r.stated(f); });
       }},
  }};

  CohortFilterReport report;
  report.steps.push_back({"input", records.size()});
  std::vector<const DeliveryRecord*> alive;
  alive.reserve(records.size());
  for (const auto& r : records) alive.push_back(&r);
  for (const auto& [name, keep] : steps) {
    std::erase_if(alive, [&](const DeliveryRecord* r) { return !keep(*r, config, predictors); });
    report.steps.push_back({name, alive.size()});
  }
  std::vector<DeliveryRecord> out;
  out.reserve(alive.size());
  for (const auto* r : alive) out.push_back(*r);
  return {std::move(out), std::move(report)};
}

LabeledCohort assign_labels(std::vector<DeliveryRecord> records, Provenance provenance) {
  LabeledCohort cohort;
  cohort.labels.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.tolac_attempted != TolacStatus::kYes) throw LabelError(i, "TOLAC not attempted");
    switch (r.delivery_method) {
      case DeliveryMethod::kVbac:
        cohort.labels.push_back(1);
        break;
      case DeliveryMethod::kRepeatCesarean:
        cohort.labels.push_back(0);
        break;
      case DeliveryMethod::kOther:
        throw LabelError(i, "delivery method is neither VBAC nor repeat cesarean");
      case DeliveryMethod::kNotStated:
        throw LabelError(i, "delivery method not stated");
    }
  }
  cohort.records = std::move(records);
  cohort.provenance = std::move(provenance);
  return cohort;
}

std::string serialize_cohort(const LabeledCohort& cohort) {
  const auto n = cohort.records.size();
  if (cohort.labels.size() != n) throw Error("cohort labels and records differ in length");
  ByteWriter w;
  w.strs(cohort.provenance.sources);
  w.str(cohort.provenance.filter_hash);
  w.u64(n);
  for (std::size_t f = 0; f < kNumericFieldCount; ++f) {
    for (const auto& r : cohort.records) w.u8(r.numeric[f].has_value() ? 1 : 0);
    for (const auto& r : cohort.records) w.f64(r.numeric[f].value_or(0.0));
  }
  for (std::size_t f = 0; f < kCategoricalFieldCount; ++f) {
    std::vector<std::string> dictionary;
    for (const auto& r : cohort.records)
      if (r.categorical[f]) dictionary.push_back(*r.categorical[f]);
    std::sort(dictionary.begin(), dictionary.end());
    dictionary.erase(std::unique(dictionary.begin(), dictionary.end()), dictionary.end());
    w.strs(dictionary);
    for (const auto& r : cohort.records) {
      if (!r.categorical[f]) {
        w.u32(kNoLevel);
        continue;
      }
      auto it = std::lower_bound(dictionary.begin(), dictionary.end(), *r.categorical[f]);
      w.u32(static_cast<std::uint32_t>(it - dictionary.begin()));
    }
  }
  for (const auto& r : cohort.records) w.u8(static_cast<std::uint8_t>(r.tolac_attempted));
  for (const auto& r : cohort.records) w.u8(static_cast<std::uint8_t>(r.delivery_method));
  for (auto label : cohort.labels) w.u8(label);
  return seal_artifact(kCohortMagic, kCohortVersion, w.bytes());
}

LabeledCohort deserialize_cohort(std::string_view bytes) {
  ByteReader r(open_artifact(bytes, kCohortMagic, kCohortVersion));
  LabeledCohort cohort;
  cohort.provenance.sources = r.strs();
  cohort.provenance.filter_hash = r.str();
  const auto n = static_cast<std::size_t>(r.u64());
  if (n > r.remaining()) throw FormatError("cohort row count exceeds payload");
  cohort.records.resize(n);
  for (std::size_t f = 0; f < kNumericFieldCount; ++f) {
    std::vector<std::uint8_t> present(n);
    for (auto& p : present) p = r.u8();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = r.f64();
      if (present[i]) cohort.records[i].numeric[f] = v;
    }
  }
  for (std::size_t f = 0; f < kCategoricalFieldCount; ++f) {
    const auto dictionary = r.strs();
    for (std::size_t i = 0; i < n; ++i) {
      const auto code = r.u32();
      if (code == kNoLevel) continue;
      if (code >= dictionary.size()) throw FormatError("categorical code out of range");
      cohort.records[i].categorical[f] = dictionary[code];
    }
  }
  for (auto& rec : cohort.records) {
    const auto v = r.u8();
    if (v > 2) throw FormatError("bad TOLAC code");
    rec.tolac_attempted = static_cast<TolacStatus>(v);
  }
  for (auto& rec : cohort.records) {
    const auto v = r.u8();
    if (v > 3) throw FormatError("bad delivery method code");
    rec.delivery_method = static_cast<DeliveryMethod>(v);
  }
  cohort.labels.resize(n);
  for (auto& label : cohort.labels) {
    label = r.u8();
    if (label > 1) throw FormatError("bad label");
  }
  if (!r.done()) throw FormatError("trailing bytes in cohort cache");
  return cohort;
}

void write_cohort_cache(const std::filesystem::path& path, const LabeledCohort& cohort) {
  write_file(path, serialize_cohort(cohort));
}

LabeledCohort read_cohort_cache(const std::filesystem::path& path) {
  return deserialize_cohort(read_file(path));
}

std::string to_natality_csv(const std::vector<DeliveryRecord>& records) {
  const auto& names = predictor_field_names();
  std::string out;
  for (const auto& name : names) out += name + ",";
  out += "tolac_attempted,delivery_method\n";
  for (const auto& r : records) {
    for (const auto& name : names) {
      const auto f = *find_field(name);
      if (f.numeric()) {
        if (const auto& v = r.numeric[f.index]) out += format_double(*v);
      } else if (const auto& v = r.categorical[f.index]) {
        out += csv_escape(*v);
      }
      out += ',';
    }
    switch (r.tolac_attempted) {
      case TolacStatus::kYes: out += "Y,"; break;
      case TolacStatus::kNo: out += "N,"; break;
      case TolacStatus::kNotStated: out += "U,"; break;
    }
    switch (r.delivery_method) {
      case DeliveryMethod::kVbac: out += "vbac"; break;
      case DeliveryMethod::kRepeatCesarean: out += "repeat_cesarean"; break;
      case DeliveryMethod::kOther: out += "other"; break;
      case DeliveryMethod::kNotStated: out += "U"; break;
    }
    out += '\n';
  }
  return out;
}

}  // namespace vbac
