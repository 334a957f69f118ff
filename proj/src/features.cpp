#include "vbac/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "vbac/errors.hpp"
#include "vbac/util.hpp"

namespace vbac {

namespace {

std::vector<FieldRef> resolve(const std::vector<std::string>& predictors) {
  std::vector<FieldRef> out;
  for (const auto& name : predictors) {
    auto f = find_field(name);
    if (!f) throw ConfigError("unknown predictor '" + name + "'");
    out.push_back(*f);
  }
  return out;
}

void write_field(ByteWriter& w, FieldRef f) {
  w.u8(static_cast<std::uint8_t>(f.kind));
  w.u8(f.index);
}

FieldRef read_field(ByteReader& r) {
  const auto kind = r.u8();
  const auto index = r.u8();
  const std::size_t limit = kind == 0 ? kNumericFieldCount : kCategoricalFieldCount;
  if (kind > 1 || index >= limit) throw FormatError("bad field reference");
  return FieldRef{static_cast<FieldRef::Kind>(kind), index};
}

void write_sizes(ByteWriter& w, const std::vector<std::size_t>& v) {
  w.u64(v.size());
  for (auto x : v) w.u64(x);
}

std::vector<std::size_t> read_sizes(ByteReader& r) {
  const auto n = r.u64();
  if (n > r.remaining() / 8) throw FormatError("truncated payload");
  std::vector<std::size_t> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<std::size_t>(r.u64());
  return v;
}

}  // namespace

bool operator==(const RemovedColumn& a, const RemovedColumn& b) {
  return a.removed == b.removed && a.kept_partner == b.kept_partner &&
         std::bit_cast<std::uint64_t>(a.r) == std::bit_cast<std::uint64_t>(b.r);
}

std::vector<std::string> FeatureMatrix::column_names() const {
  std::vector<std::string> names;
  names.reserve(columns.size());
  for (const auto& c : columns) names.push_back(c.name());
  return names;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> rows) const {
  FeatureMatrix out;
  out.columns = columns;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// ---- imputation -----------------------------------------------------------

Imputer Imputer::fit(const std::vector<DeliveryRecord>& records,
                     const std::vector<std::string>& predictors) {
  Imputer imp;
  for (auto f : resolve(predictors)) {
    const std::string name(field_name(f));
    if (f.numeric()) {
      std::vector<double> stated;
      for (const auto& r : records)
        if (r.numeric[f.index]) stated.push_back(*r.numeric[f.index]);
      if (stated.empty()) throw DataError(name, "no stated values to impute from");
      std::sort(stated.begin(), stated.end());
      const auto n = stated.size();
      const double median = n % 2 ? stated[n / 2] : 0.5 * (stated[n / 2 - 1] + stated[n / 2]);
      imp.numeric_.emplace_back(f, median);
    } else {
      std::map<std::string, std::size_t> counts;
      for (const auto& r : records)
        if (r.categorical[f.index]) ++counts[*r.categorical[f.index]];
      if (counts.empty()) throw DataError(name, "no stated values to impute from");
      // std::map iterates lexicographically, so the first maximum wins ties.
      auto best = counts.begin();
      for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second) best = it;
      imp.categorical_.emplace_back(f, best->first);
    }
  }
  return imp;
}

DeliveryRecord Imputer::apply(DeliveryRecord record) const {
  for (const auto& [f, v] : numeric_)
    if (!record.numeric[f.index]) record.numeric[f.index] = v;
  for (const auto& [f, v] : categorical_)
    if (!record.categorical[f.index]) record.categorical[f.index] = v;
  return record;
}

std::vector<DeliveryRecord> Imputer::apply(std::vector<DeliveryRecord> records) const {
  for (auto& r : records) r = apply(std::move(r));
  return records;
}

void Imputer::write(ByteWriter& w) const {
  w.u64(numeric_.size());
  for (const auto& [f, v] : numeric_) {
    write_field(w, f);
    w.f64(v);
  }
  w.u64(categorical_.size());
  for (const auto& [f, v] : categorical_) {
    write_field(w, f);
    w.str(v);
  }
}

Imputer Imputer::read(ByteReader& r) {
  Imputer imp;
  for (auto n = r.u64(); n > 0; --n) {
    const auto f = read_field(r);
    imp.numeric_.emplace_back(f, r.f64());
  }
  for (auto n = r.u64(); n > 0; --n) {
    const auto f = read_field(r);
    imp.categorical_.emplace_back(f, r.str());
  }
  return imp;
}

std::vector<DeliveryRecord> impute(std::vector<DeliveryRecord> records,
                                   const std::vector<std::string>& predictors) {
  const auto imp = Imputer::fit(records, predictors);
  return imp.apply(std::move(records));
}

// ---- one-hot encoding -----------------------------------------------------

OneHotEncoder OneHotEncoder::fit(const std::vector<DeliveryRecord>& records,
                                 const std::vector<std::string>& predictors, bool drop_first) {
  OneHotEncoder enc;
  for (auto f : resolve(predictors)) {
    EncodedField ef;
    ef.name = std::string(field_name(f));
    ef.field = f;
    if (f.numeric()) {
      bool first = true;
      for (const auto& r : records) {
        if (!r.numeric[f.index]) continue;
        const double v = *r.numeric[f.index];
        ef.observed_min = first ? v : std::min(ef.observed_min, v);
        ef.observed_max = first ? v : std::max(ef.observed_max, v);
        first = false;
      }
    } else {
      for (const auto& r : records)
        if (r.categorical[f.index]) ef.levels.push_back(*r.categorical[f.index]);
      std::sort(ef.levels.begin(), ef.levels.end());
      ef.levels.erase(std::unique(ef.levels.begin(), ef.levels.end()), ef.levels.end());
      if (ef.levels.empty()) throw DataError(ef.name, "no stated levels to encode");
      ef.drop_first = drop_first;
    }
    enc.fields_.push_back(std::move(ef));
  }
  return enc;
}

std::size_t OneHotEncoder::output_columns() const {
  std::size_t n = 0;
  for (const auto& f : fields_)
    n += f.field.numeric() ? 1 : f.levels.size() - (f.drop_first ? 1 : 0);
  return n;
}

std::vector<ColumnMeta> OneHotEncoder::column_meta() const {
  std::vector<ColumnMeta> meta;
  for (const auto& f : fields_) {
    if (f.field.numeric()) {
      meta.push_back(ColumnMeta{f.name});
      continue;
    }
    for (std::size_t l = f.drop_first ? 1 : 0; l < f.levels.size(); ++l)
      meta.push_back(ColumnMeta{f.name, f.levels[l]});
  }
  return meta;
}

void OneHotEncoder::encode_row(const DeliveryRecord& record, std::span<double> out) const {
  if (out.size() != output_columns()) throw ShapeError("encode_row: output width mismatch");
  std::size_t c = 0;
  for (const auto& f : fields_) {
    if (f.field.numeric()) {
      const auto& v = record.numeric[f.field.index];
      if (!v) throw DataError(f.name, "value not stated");
      out[c++] = *v;
      continue;
    }
    const auto& v = record.categorical[f.field.index];
    if (!v) throw DataError(f.name, "value not stated");
    auto it = std::lower_bound(f.levels.begin(), f.levels.end(), *v);
    if (it == f.levels.end() || *it != *v) throw UnseenLevelError(f.name, *v, f.levels);
    const auto level = static_cast<std::size_t>(it - f.levels.begin());
    const std::size_t first = f.drop_first ? 1 : 0;
    for (std::size_t l = first; l < f.levels.size(); ++l) out[c++] = l == level ? 1.0 : 0.0;
  }
}

FeatureMatrix OneHotEncoder::transform(const std::vector<DeliveryRecord>& records) const {
  FeatureMatrix m;
  m.columns = column_meta();
  const auto width = output_columns();
  m.values.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(width));
  std::vector<double> row(width);
  for (std::size_t i = 0; i < records.size(); ++i) {
    encode_row(records[i], row);
    for (std::size_t c = 0; c < width; ++c)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

void OneHotEncoder::write(ByteWriter& w) const {
  w.u64(fields_.size());
  for (const auto& f : fields_) {
    w.str(f.name);
    write_field(w, f.field);
    w.strs(f.levels);
    w.u8(f.drop_first ? 1 : 0);
    w.f64(f.observed_min);
    w.f64(f.observed_max);
  }
}

OneHotEncoder OneHotEncoder::read(ByteReader& r) {
  OneHotEncoder enc;
  for (auto n = r.u64(); n > 0; --n) {
    EncodedField f;
    f.name = r.str();
    f.field = read_field(r);
    f.levels = r.strs();
    f.drop_first = r.u8() != 0;
    f.observed_min = r.f64();
    f.observed_max = r.f64();
    if (!f.field.numeric() && f.levels.empty()) throw FormatError("categorical field without levels");
    enc.fields_.push_back(std::move(f));
  }
  return enc;
}

FeatureMatrix one_hot_encode(const std::vector<DeliveryRecord>& records,
                             const std::vector<std::string>& predictors) {
  return OneHotEncoder::fit(records, predictors).transform(records);
}

// ---- standardization ------------------------------------------------------

Standardizer Standardizer::fit(const FeatureMatrix& matrix, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("standardizer", "no rows to fit on");
  Standardizer s;
  s.input_columns_ = static_cast<std::size_t>(matrix.cols());
  const double n = static_cast<double>(rows.size());
  for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
    double sum = 0;
    for (auto r : rows) sum += matrix.values(static_cast<Eigen::Index>(r), c);
    const double mean = sum / n;
    double ss = 0;
    for (auto r : rows) {
      const double d = matrix.values(static_cast<Eigen::Index>(r), c) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0)) {
      s.dropped_.push_back(matrix.columns[static_cast<std::size_t>(c)].name());
      continue;
    }
    s.kept_.push_back(static_cast<std::size_t>(c));
    s.means_.push_back(mean);
    s.sds_.push_back(sd);
  }
  return s;
}

Standardizer Standardizer::fit(const FeatureMatrix& matrix) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(matrix.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return fit(matrix, rows);
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& matrix) const {
  if (static_cast<std::size_t>(matrix.cols()) != input_columns_)
    throw ShapeError("standardizer fitted on " + std::to_string(input_columns_) +
                     " columns, got " + std::to_string(matrix.cols()));
  FeatureMatrix out;
  out.values.resize(matrix.rows(), static_cast<Eigen::Index>(kept_.size()));
  for (std::size_t k = 0; k < kept_.size(); ++k) {
    const auto src = static_cast<Eigen::Index>(kept_[k]);
    const auto dst = static_cast<Eigen::Index>(k);
    for (Eigen::Index r = 0; r < matrix.rows(); ++r)
      out.values(r, dst) = (matrix.values(r, src) - means_[k]) / sds_[k];
    ColumnMeta meta = matrix.columns[kept_[k]];
    meta.scaler_mean = means_[k];
    meta.scaler_sd = sds_[k];
    out.columns.push_back(std::move(meta));
  }
  return out;
}

void Standardizer::write(ByteWriter& w) const {
  w.u64(input_columns_);
  write_sizes(w, kept_);
  w.f64s(means_);
  w.f64s(sds_);
  w.strs(dropped_);
}

Standardizer Standardizer::read(ByteReader& r) {
  Standardizer s;
  s.input_columns_ = static_cast<std::size_t>(r.u64());
  s.kept_ = read_sizes(r);
  s.means_ = r.f64s();
  s.sds_ = r.f64s();
  s.dropped_ = r.strs();
  if (s.means_.size() != s.kept_.size() || s.sds_.size() != s.kept_.size())
    throw FormatError("standardizer arrays disagree in length");
  for (auto k : s.kept_)
    if (k >= s.input_columns_) throw FormatError("standardizer column out of range");
  for (double sd : s.sds_)
    if (!(sd > 0)) throw FormatError("standardizer sd must be positive");
  return s;
}

// ---- correlation pruning --------------------------------------------------

double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  const Eigen::VectorXd ca = a.array() - a.mean();
  const Eigen::VectorXd cb = b.array() - b.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  return denom > 0 ? ca.dot(cb) / denom : 0.0;
}

FeatureMatrix select_columns(const FeatureMatrix& matrix, std::span<const std::size_t> columns) {
  FeatureMatrix out;
  out.values.resize(matrix.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    out.values.col(static_cast<Eigen::Index>(k)) = matrix.values.col(static_cast<Eigen::Index>(columns[k]));
    out.columns.push_back(matrix.columns[columns[k]]);
  }
  return out;
}

PruneResult prune_correlated(const FeatureMatrix& matrix, std::span<const std::size_t> rows,
                             double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw ConfigError("correlation threshold must be in (0, 1]");
  const auto p = matrix.cols();
  Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i)
    sub.row(static_cast<Eigen::Index>(i)) = matrix.values.row(static_cast<Eigen::Index>(rows[i]));
  const Eigen::RowVectorXd mean = sub.colwise().mean();
  sub.rowwise() -= mean;
  const Eigen::MatrixXd gram = sub.transpose() * sub;

  PruneResult result;
  std::vector<bool> removed(static_cast<std::size_t>(p), false);
  for (Eigen::Index j = 1; j < p; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const double denom = std::sqrt(gram(i, i) * gram(j, j));
      const double r = denom > 0 ? gram(i, j) / denom : 0.0;
      if (std::abs(r) >= threshold) {
        removed[static_cast<std::size_t>(j)] = true;
        result.removed.push_back({matrix.columns[static_cast<std::size_t>(j)].name(),
                                  matrix.columns[static_cast<std::size_t>(i)].name(), r});
        break;
      }
    }
  }
  for (Eigen::Index c = 0; c < p; ++c)
    if (!removed[static_cast<std::size_t>(c)]) result.kept.push_back(static_cast<std::size_t>(c));
  result.matrix = select_columns(matrix, result.kept);
  return result;
}

PruneResult prune_correlated(const FeatureMatrix& matrix, double threshold) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(matrix.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return prune_correlated(matrix, rows, threshold);
}

// ---- splitting ------------------------------------------------------------

namespace {

std::array<std::vector<std::size_t>, 2> indices_by_class(std::span<const std::uint8_t> labels) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw DataError("labels", "labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  return by_class;
}

}  // namespace

Split stratified_split(std::span<const std::uint8_t> labels, double test_fraction,
                       std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test fraction must be in (0, 1)");
  auto by_class = indices_by_class(labels);
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < 2)
      throw DataError("labels", "class " + std::to_string(c) + " has fewer than 2 members");
  Rng rng(seed);
  Split split;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(static_cast<double>(members.size()) * test_fraction));
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const std::uint8_t> labels, int k,
                                                       std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  auto by_class = indices_by_class(labels);
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < static_cast<std::size_t>(k))
      throw DataError("labels", "class " + std::to_string(c) + " has fewer members than k = " +
                                    std::to_string(k));
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t offset = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i)
      folds[(offset + i) % static_cast<std::size_t>(k)].push_back(members[i]);
    offset += members.size();
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

ClassWeights compute_class_weights(std::span<const std::uint8_t> labels) {
  std::size_t ones = 0;
  for (auto l : labels) ones += l ? 1 : 0;
  const std::size_t zeros = labels.size() - ones;
  if (ones == 0 || zeros == 0) throw DataError("labels", "class weights need both classes present");
  const double n = static_cast<double>(labels.size());
  return ClassWeights{n / (2.0 * static_cast<double>(zeros)), n / (2.0 * static_cast<double>(ones))};
}

// ---- fitted chain ---------------------------------------------------------

Preprocessor Preprocessor::fit(const std::vector<DeliveryRecord>& records,
                               std::span<const std::size_t> train_rows,
                               const PreprocessConfig& config) {
  if (config.predictors.empty()) throw ConfigError("preprocessing needs at least one predictor");
  Preprocessor p;
  p.path_ = config.path;
  p.predictors_ = config.predictors;

  std::vector<DeliveryRecord> train;
  train.reserve(train_rows.size());
  for (auto r : train_rows) train.push_back(records.at(r));

  const std::vector<DeliveryRecord>* source = &records;
  std::vector<DeliveryRecord> imputed;
  if (p.path_ == FeaturePath::kLogistic) {
    p.imputer_ = Imputer::fit(train, config.predictors);
    imputed = p.imputer_->apply(records);
    source = &imputed;
  }
  // Level sets come from every row handed in; statistics below use training
  // rows only.
  p.encoder_ = OneHotEncoder::fit(*source, config.predictors, p.path_ == FeaturePath::kLogistic);
  const FeatureMatrix encoded = p.encoder_.transform(*source);
  p.standardizer_ = Standardizer::fit(encoded, train_rows);
  const FeatureMatrix scaled = p.standardizer_.apply(encoded);
  auto pruned = prune_correlated(scaled, train_rows, config.correlation_threshold);
  p.kept_after_prune_ = std::move(pruned.kept);
  p.pruned_ = std::move(pruned.removed);
  p.output_meta_ = std::move(pruned.matrix.columns);
  if (p.output_meta_.empty()) throw DataError("features", "no informative columns survive preprocessing");
  return p;
}

FeatureMatrix Preprocessor::transform(const std::vector<DeliveryRecord>& records) const {
  FeatureMatrix encoded = imputer_ ? encoder_.transform(imputer_->apply(records))
                                   : encoder_.transform(records);
  return select_columns(standardizer_.apply(encoded), kept_after_prune_);
}

Eigen::RowVectorXd Preprocessor::transform_row(const DeliveryRecord& record) const {
  std::vector<double> encoded(encoder_.output_columns());
  if (imputer_)
    encoder_.encode_row(imputer_->apply(record), encoded);
  else
    encoder_.encode_row(record, encoded);
  const auto& kept = standardizer_.kept();
  const auto& means = standardizer_.means();
  const auto& sds = standardizer_.sds();
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(kept_after_prune_.size()));
  for (std::size_t k = 0; k < kept_after_prune_.size(); ++k) {
    const auto s = kept_after_prune_[k];
    out(static_cast<Eigen::Index>(k)) = (encoded[kept[s]] - means[s]) / sds[s];
  }
  return out;
}

void Preprocessor::write(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(path_));
  w.strs(predictors_);
  w.u8(imputer_ ? 1 : 0);
  if (imputer_) imputer_->write(w);
  encoder_.write(w);
  standardizer_.write(w);
  write_sizes(w, kept_after_prune_);
  w.u64(pruned_.size());
  for (const auto& rc : pruned_) {
    w.str(rc.removed);
    w.str(rc.kept_partner);
    w.f64(rc.r);
  }
}

Preprocessor Preprocessor::read(ByteReader& r) {
  Preprocessor p;
  const auto path = r.u8();
  if (path > 1) throw FormatError("bad feature path");
  p.path_ = static_cast<FeaturePath>(path);
  p.predictors_ = r.strs();
  if (r.u8() != 0) p.imputer_ = Imputer::read(r);
  p.encoder_ = OneHotEncoder::read(r);
  p.standardizer_ = Standardizer::read(r);
  p.kept_after_prune_ = read_sizes(r);
  for (auto n = r.u64(); n > 0; --n) {
    RemovedColumn rc;
    rc.removed = r.str();
    rc.kept_partner = r.str();
    rc.r = r.f64();
    p.pruned_.push_back(std::move(rc));
  }
  if (p.standardizer_.input_columns() != p.encoder_.output_columns())
    throw FormatError("standardizer width does not match encoder output");
  const auto meta = p.encoder_.column_meta();
  for (auto k : p.kept_after_prune_) {
    if (k >= p.standardizer_.kept().size()) throw FormatError("pruned column index out of range");
    ColumnMeta m = meta[p.standardizer_.kept()[k]];
    m.scaler_mean = p.standardizer_.means()[k];
    m.scaler_sd = p.standardizer_.sds()[k];
    p.output_meta_.push_back(std::move(m));
  }
  return p;
}

}  // namespace vbac
