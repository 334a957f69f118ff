#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vbac {

// Root of every error the toolkit throws. Subclasses carry the context a
// caller needs to report the failure (column name, level, fold index, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration or precondition (exit code 1 in the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public Error {
 public:
  explicit MissingFileError(std::string path)
      : Error("file not found: " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class EmptyFileError : public Error {
 public:
  explicit EmptyFileError(std::string path)
      : Error("file is empty (no header row): " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// A mapped column is absent from the CSV header.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, std::string column)
      : Error("schema maps field '" + field + "' to column '" + column +
              "', which is not in the header"),
        field_(std::move(field)),
        column_(std::move(column)) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::string field_;
  std::string column_;
};

class LabelError : public Error {
 public:
  LabelError(std::size_t row, const std::string& detail)
      : Error("cannot label record " + std::to_string(row) + ": " + detail), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// A predictor with no usable values, or a value where one is required.
class DataError : public Error {
 public:
  DataError(std::string field, const std::string& detail)
      : Error(field + ": " + detail), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class UnseenLevelError : public Error {
 public:
  UnseenLevelError(std::string field, std::string level, std::vector<std::string> allowed);
  const std::string& field() const noexcept { return field_; }
  const std::string& level() const noexcept { return level_; }
  const std::vector<std::string>& allowed() const noexcept { return allowed_; }

 private:
  std::string field_;
  std::string level_;
  std::vector<std::string> allowed_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  SingularMatrixError(std::vector<std::string> dependent);
  const std::vector<std::string>& dependent_columns() const noexcept { return dependent_; }

 private:
  std::vector<std::string> dependent_;
};

// Unsupported version, checksum mismatch or malformed payload in a binary
// artifact (bundle or cohort cache).
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace vbac
