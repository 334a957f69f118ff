#pragma once

// A trained model of any family plus everything needed to score a raw
// record: preprocessing chain, decision threshold and training metadata.

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>

#include "vbac/features.hpp"
#include "vbac/gbt.hpp"
#include "vbac/linmod.hpp"
#include "vbac/mlp.hpp"

namespace vbac {

enum class ModelFamily : std::uint8_t { kLogistic, kMlp, kGbt };

std::string_view family_name(ModelFamily f);
ModelFamily parse_family(std::string_view name);

struct BundleMetadata {
  std::string config_hash;
  std::string eval_summary;  // EvalReport JSON of the held-out test split
  std::size_t training_rows = 0;
  friend bool operator==(const BundleMetadata&, const BundleMetadata&) = default;
};

using AnyModel = std::variant<LogisticModel, MlpModel, GbtModel>;

struct ModelBundle {
  Preprocessor preprocessor;
  AnyModel model;
  double threshold = 0.5;
  BundleMetadata metadata;

  ModelFamily family() const { return static_cast<ModelFamily>(model.index()); }
  Eigen::Index input_width() const;

  // Throws FormatError when the pieces do not fit together.
  void validate() const;

  double predict_row(const DeliveryRecord& record) const;
  double predict_encoded(std::span<const double> row) const;
  Eigen::VectorXd predict(const std::vector<DeliveryRecord>& records) const;
  Eigen::VectorXd predict(const FeatureMatrix& encoded) const;
};

inline constexpr std::uint32_t kBundleVersion = 1;

std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle deserialize_bundle(std::string_view bytes);
void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);

void write_logistic(ByteWriter& w, const LogisticModel& m);
LogisticModel read_logistic(ByteReader& r);

}  // namespace vbac
