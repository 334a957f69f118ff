#include "vbac/bundle.hpp"

#include <cmath>

#include "vbac/errors.hpp"
#include "vbac/util.hpp"

namespace vbac {

namespace {

constexpr std::string_view kMagic = "VBACBNDL";

std::string section_bytes(const auto& write) {
  ByteWriter w;
  write(w);
  return w.take();
}

// Reads one tagged section and checks the tag.
std::string_view expect_section(ByteReader& r, std::string_view tag) {
  const auto got = r.raw(4);
  if (got != tag) throw FormatError("bundle: expected section '" + std::string(tag) + "', found '" + std::string(got) + "'");
  const auto len = r.u64();
  if (len > r.remaining()) throw FormatError("bundle: section '" + std::string(tag) + "' is truncated");
  return r.raw(static_cast<std::size_t>(len));
}

}  // namespace

std::string_view family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::kLogistic: return "logistic";
    case ModelFamily::kMlp: return "mlp";
    case ModelFamily::kGbt: return "gbt";
  }
  return "logistic";
}

ModelFamily parse_family(std::string_view name) {
  if (name == "logistic") return ModelFamily::kLogistic;
  if (name == "mlp") return ModelFamily::kMlp;
  if (name == "gbt") return ModelFamily::kGbt;
  throw ConfigError("unknown model family '" + std::string(name) + "' (expected logistic, mlp or gbt)");
}

void write_logistic(ByteWriter& w, const LogisticModel& m) {
  w.f64(m.intercept);
  w.f64s(std::span<const double>(m.coefficients.data(), static_cast<std::size_t>(m.coefficients.size())));
  w.strs(m.feature_names);
  w.f64(m.l2);
  w.i32(m.iterations);
  w.u8(m.converged ? 1 : 0);
  w.u8(m.separation_warning ? 1 : 0);
  w.f64(m.neg_log_likelihood);
}

LogisticModel read_logistic(ByteReader& r) {
  LogisticModel m;
  m.intercept = r.f64();
  const auto coef = r.f64s();
  m.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
  m.feature_names = r.strs();
  m.l2 = r.f64();
  m.iterations = r.i32();
  m.converged = r.u8() != 0;
  m.separation_warning = r.u8() != 0;
  m.neg_log_likelihood = r.f64();
  if (!m.feature_names.empty() && m.feature_names.size() != coef.size())
    throw FormatError("logistic: feature names do not match coefficients");
  return m;
}

Eigen::Index ModelBundle::input_width() const {
  return std::visit(
      [](const auto& m) -> Eigen::Index {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogisticModel>)
          return m.features();
        else if constexpr (std::is_same_v<T, MlpModel>)
          return m.input_size();
        else
          return m.n_features;
      },
      model);
}

void ModelBundle::validate() const {
  if (!(threshold > 0 && threshold < 1)) throw FormatError("bundle: threshold must lie in (0, 1)");
  if (static_cast<std::size_t>(input_width()) != preprocessor.output_width())
    throw FormatError("bundle: model expects " + std::to_string(input_width()) + " features, preprocessing yields " +
                      std::to_string(preprocessor.output_width()));
  if (const auto* lm = std::get_if<LogisticModel>(&model)) {
    if (!lm->feature_names.empty()) {
      std::vector<std::string> names;
      for (const auto& c : preprocessor.output_columns()) names.push_back(c.name());
      if (names != lm->feature_names) throw FormatError("bundle: logistic feature order differs from preprocessing");
    }
  }
}

double ModelBundle::predict_encoded(std::span<const double> row) const {
  return std::visit([&](const auto& m) { return predict_proba_row(m, row); }, model);
}

double ModelBundle::predict_row(const DeliveryRecord& record) const {
  const Eigen::RowVectorXd row = preprocessor.transform_row(record);
  return predict_encoded(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
}

Eigen::VectorXd ModelBundle::predict(const FeatureMatrix& encoded) const {
  return std::visit([&](const auto& m) -> Eigen::VectorXd { return predict_proba(m, encoded.values); }, model);
}

Eigen::VectorXd ModelBundle::predict(const std::vector<DeliveryRecord>& records) const {
  return predict(preprocessor.transform(records));
}

std::string serialize_bundle(const ModelBundle& bundle) {
  bundle.validate();
  ByteWriter payload;
  write_section(payload, "FAMI", section_bytes([&](ByteWriter& w) { w.u8(static_cast<std::uint8_t>(bundle.family())); }));
  write_section(payload, "PREP", section_bytes([&](ByteWriter& w) { bundle.preprocessor.write(w); }));
  write_section(payload, "MODL", section_bytes([&](ByteWriter& w) {
                  std::visit(
                      [&](const auto& m) {
                        using T = std::decay_t<decltype(m)>;
                        if constexpr (std::is_same_v<T, LogisticModel>)
                          write_logistic(w, m);
                        else
                          m.write(w);
                      },
                      bundle.model);
                }));
  write_section(payload, "THRS", section_bytes([&](ByteWriter& w) { w.f64(bundle.threshold); }));
  write_section(payload, "META", section_bytes([&](ByteWriter& w) {
                  w.str(bundle.metadata.config_hash);
                  w.str(bundle.metadata.eval_summary);
                  w.u64(bundle.metadata.training_rows);
                }));
  return seal_artifact(kMagic, kBundleVersion, payload.bytes());
}

ModelBundle deserialize_bundle(std::string_view bytes) {
  ByteReader outer(open_artifact(bytes, kMagic, kBundleVersion));
  ModelBundle b;

  ByteReader fam(expect_section(outer, "FAMI"));
  const auto family = fam.u8();
  if (family > 2) throw FormatError("bundle: unknown model family tag");

  ByteReader prep(expect_section(outer, "PREP"));
  b.preprocessor = Preprocessor::read(prep);

  ByteReader model(expect_section(outer, "MODL"));
  switch (static_cast<ModelFamily>(family)) {
    case ModelFamily::kLogistic: b.model = read_logistic(model); break;
    case ModelFamily::kMlp: b.model = MlpModel::read(model); break;
    case ModelFamily::kGbt: b.model = GbtModel::read(model); break;
  }

  ByteReader thr(expect_section(outer, "THRS"));
  b.threshold = thr.f64();

  ByteReader meta(expect_section(outer, "META"));
  b.metadata.config_hash = meta.str();
  b.metadata.eval_summary = meta.str();
  b.metadata.training_rows = meta.u64();

  for (auto* r : {&fam, &prep, &model, &thr, &meta, &outer})
    if (!r->done()) throw FormatError("bundle: trailing bytes in a section");
  b.validate();
  return b;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
  write_file(path, serialize_bundle(bundle));
}

ModelBundle load_bundle(const std::filesystem::path& path) { return deserialize_bundle(read_file(path)); }

}  // namespace vbac
