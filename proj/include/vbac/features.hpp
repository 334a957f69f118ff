#pragma once

// Cohort -> model matrix: imputation, one-hot encoding, standardization,
// correlation pruning, stratified splitting and class weights.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vbac/cohort.hpp"

namespace vbac {

class ByteWriter;
class ByteReader;

inline constexpr const char* kNumericLevel = "numeric";

struct ColumnMeta {
  std::string source_field;
  std::string level = kNumericLevel;  // category level, or "numeric"
  double scaler_mean = 0.0;
  double scaler_sd = 1.0;

  bool numeric() const { return level == kNumericLevel; }
  std::string name() const { return numeric() ? source_field : source_field + "=" + level; }
  friend bool operator==(const ColumnMeta&, const ColumnMeta&) = default;
};

struct FeatureMatrix {
  Eigen::MatrixXd values;  // rows = deliveries
  std::vector<ColumnMeta> columns;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  std::vector<std::string> column_names() const;
  FeatureMatrix select_rows(std::span<const std::size_t> rows) const;
};

// Imputation for the logistic path: mode for categoricals (ties -> the
// lexicographically first level), median for numerics, both from stated
// values only.
class Imputer {
 public:
  static Imputer fit(const std::vector<DeliveryRecord>& records,
                     const std::vector<std::string>& predictors);
  std::vector<DeliveryRecord> apply(std::vector<DeliveryRecord> records) const;
  DeliveryRecord apply(DeliveryRecord record) const;

  const std::vector<std::pair<FieldRef, double>>& numeric_fill() const { return numeric_; }
  const std::vector<std::pair<FieldRef, std::string>>& categorical_fill() const {
    return categorical_;
  }

  void write(ByteWriter& w) const;
  static Imputer read(ByteReader& r);
  friend bool operator==(const Imputer&, const Imputer&) = default;

 private:
  std::vector<std::pair<FieldRef, double>> numeric_;
  std::vector<std::pair<FieldRef, std::string>> categorical_;
};

std::vector<DeliveryRecord> impute(std::vector<DeliveryRecord> records,
                                   const std::vector<std::string>& predictors);

// Per-predictor encoding plan. Levels are sorted lexicographically; with
// drop_first the first level is the omitted reference.
struct EncodedField {
  std::string name;
  FieldRef field;
  std::vector<std::string> levels;  // empty for numeric fields
  bool drop_first = false;
  double observed_min = 0.0;  // numeric range seen at fit time
  double observed_max = 0.0;
  friend bool operator==(const EncodedField&, const EncodedField&) = default;
};

class OneHotEncoder {
 public:
  static OneHotEncoder fit(const std::vector<DeliveryRecord>& records,
                           const std::vector<std::string>& predictors, bool drop_first = false);
  FeatureMatrix transform(const std::vector<DeliveryRecord>& records) const;
  // Encodes into `out` (size output_columns()).
  void encode_row(const DeliveryRecord& record, std::span<double> out) const;

  std::size_t output_columns() const;
  std::vector<ColumnMeta> column_meta() const;
  const std::vector<EncodedField>& fields() const { return fields_; }

  void write(ByteWriter& w) const;
  static OneHotEncoder read(ByteReader& r);
  friend bool operator==(const OneHotEncoder&, const OneHotEncoder&) = default;

 private:
  std::vector<EncodedField> fields_;
};

FeatureMatrix one_hot_encode(const std::vector<DeliveryRecord>& records,
                             const std::vector<std::string>& predictors);

// Column-wise (x - mean) / sd with population sd; constant columns are
// dropped and listed in dropped().
class Standardizer {
 public:
  static Standardizer fit(const FeatureMatrix& matrix, std::span<const std::size_t> rows);
  static Standardizer fit(const FeatureMatrix& matrix);
  FeatureMatrix apply(const FeatureMatrix& matrix) const;

  const std::vector<std::size_t>& kept() const { return kept_; }
  const std::vector<std::string>& dropped() const { return dropped_; }
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& sds() const { return sds_; }
  std::size_t input_columns() const { return input_columns_; }

  void write(ByteWriter& w) const;
  static Standardizer read(ByteReader& r);
  friend bool operator==(const Standardizer&, const Standardizer&) = default;

 private:
  std::size_t input_columns_ = 0;
  std::vector<std::size_t> kept_;
  std::vector<double> means_;  // per kept column
  std::vector<double> sds_;
  std::vector<std::string> dropped_;
};

struct RemovedColumn {
  std::string removed;
  std::string kept_partner;
  double r;
};

struct PruneResult {
  FeatureMatrix matrix;
  std::vector<std::size_t> kept;  // indices into the input columns
  std::vector<RemovedColumn> removed;
};

double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

// Marks column j for removal when some earlier column i has |r| >= threshold.
PruneResult prune_correlated(const FeatureMatrix& matrix, double threshold = 0.95);
PruneResult prune_correlated(const FeatureMatrix& matrix, std::span<const std::size_t> rows,
                             double threshold);

FeatureMatrix select_columns(const FeatureMatrix& matrix, std::span<const std::size_t> columns);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

Split stratified_split(std::span<const std::uint8_t> labels, double test_fraction,
                       std::uint64_t seed);
std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const std::uint8_t> labels, int k,
                                                       std::uint64_t seed);

struct ClassWeights {
  double label0;
  double label1;
  double operator()(std::uint8_t label) const { return label ? label1 : label0; }
};

ClassWeights compute_class_weights(std::span<const std::uint8_t> labels);

enum class FeaturePath : std::uint8_t {
  kLogistic,  // imputation + reference-level drop
  kFull,      // complete cases + full one-hot encoding
};

struct PreprocessConfig {
  FeaturePath path = FeaturePath::kFull;
  std::vector<std::string> predictors;
  double correlation_threshold = 0.95;
};

// The fitted chain imputer? -> encoder -> standardizer -> pruning, as
// stored in a model bundle.
class Preprocessor {
 public:
  static Preprocessor fit(const std::vector<DeliveryRecord>& records,
                          std::span<const std::size_t> train_rows, const PreprocessConfig& config);

  FeatureMatrix transform(const std::vector<DeliveryRecord>& records) const;
  Eigen::RowVectorXd transform_row(const DeliveryRecord& record) const;

  FeaturePath path() const { return path_; }
  const std::vector<std::string>& predictors() const { return predictors_; }
  const OneHotEncoder& encoder() const { return encoder_; }
  const std::optional<Imputer>& imputer() const { return imputer_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const std::vector<std::size_t>& kept_after_prune() const { return kept_after_prune_; }
  const std::vector<RemovedColumn>& pruned() const { return pruned_; }
  const std::vector<ColumnMeta>& output_columns() const { return output_meta_; }
  std::size_t output_width() const { return output_meta_.size(); }

  void write(ByteWriter& w) const;
  static Preprocessor read(ByteReader& r);
  friend bool operator==(const Preprocessor&, const Preprocessor&) = default;

 private:
  FeaturePath path_ = FeaturePath::kFull;
  std::vector<std::string> predictors_;
  std::optional<Imputer> imputer_;
  OneHotEncoder encoder_;
  Standardizer standardizer_;
  std::vector<std::size_t> kept_after_prune_;
  std::vector<RemovedColumn> pruned_;
  std::vector<ColumnMeta> output_meta_;
};

bool operator==(const RemovedColumn& a, const RemovedColumn& b);

}  // namespace vbac
