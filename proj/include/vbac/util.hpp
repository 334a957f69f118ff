#pragma once

// Small shared pieces: hashing, seeded RNG fan-out, little-endian byte
// streams, CSV tokenizing and shortest round-trip number formatting.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vbac {

using Rng = std::mt19937_64;

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow.
inline double log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// Derives an independent child seed from a root seed and a stage label, so
// every stage of a run draws from its own stream.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v);
  void str(std::string_view s);
  void raw(std::string_view bytes) { buffer_.append(bytes); }
  void f64s(std::span<const double> values);
  void strs(const std::vector<std::string>& values);

  const std::string& bytes() const noexcept { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  std::string buffer_;
};

// Bounds-checked reader over a byte buffer; throws FormatError on
// truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64();
  std::string str();
  std::string_view raw(std::size_t n);
  std::vector<double> f64s();
  std::vector<std::string> strs();

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

// Appends a tagged section: 4-byte tag, u64 length, payload.
void write_section(ByteWriter& out, std::string_view tag, std::string_view payload);

// Wraps a payload as magic | u32 version | payload | 32-byte SHA-256 of
// everything before it.
std::string seal_artifact(std::string_view magic, std::uint32_t version, std::string_view payload);

// Verifies magic, version and checksum and returns the payload view.
std::string_view open_artifact(std::string_view bytes, std::string_view magic,
                               std::uint32_t version);

// Splits one CSV record (RFC 4180 quoting). `line` must not include the
// terminating newline.
std::vector<std::string> split_csv_line(std::string_view line);

// Quotes a field for CSV output when needed.
std::string csv_escape(std::string_view field);

}  // namespace vbac
