#include "vbac/util.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vbac/errors.hpp"

namespace vbac {

UnseenLevelError::UnseenLevelError(std::string field, std::string level,
                                   std::vector<std::string> allowed)
    : Error([&] {
        std::string msg = "unseen level '" + level + "' for field '" + field + "' (allowed:";
        for (const auto& a : allowed) msg += " " + a;
        return msg + ")";
      }()),
      field_(std::move(field)),
      level_(std::move(level)),
      allowed_(std::move(allowed)) {}

SingularMatrixError::SingularMatrixError(std::vector<std::string> dependent)
    : Error([&] {
        std::string msg = "information matrix is singular; dependent columns:";
        for (const auto& d : dependent) msg += " " + d;
        return msg;
      }()),
      dependent_(std::move(dependent)) {}

namespace {

std::array<unsigned char, 32> sha256_raw(std::string_view data) {
  std::array<unsigned char, 32> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest.data(), &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  return digest;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  const auto digest = sha256_raw(data);
  std::string out;
  out.reserve(64);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  std::string material = std::to_string(root);
  material.push_back('/');
  material.append(label);
  const auto digest = sha256_raw(material);
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed = (seed << 8) | digest[static_cast<std::size_t>(i)];
  return seed;
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf.data(), ptr);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error("write failed: " + path.string());
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  buffer_.append(s);
}

void ByteWriter::f64s(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void ByteWriter::strs(const std::vector<std::string>& values) {
  u64(values.size());
  for (const auto& v : values) str(v);
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) throw FormatError("truncated payload");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string_view ByteReader::raw(std::size_t n) {
  need(n);
  auto out = bytes_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::str() {
  const auto n = u64();
  return std::string(raw(static_cast<std::size_t>(n)));
}

std::vector<double> ByteReader::f64s() {
  const auto n = u64();
  need(static_cast<std::size_t>(n) * 8);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = f64();
  return out;
}

std::vector<std::string> ByteReader::strs() {
  const auto n = u64();
  if (n > remaining()) throw FormatError("truncated payload");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(str());
  return out;
}

void write_section(ByteWriter& out, std::string_view tag, std::string_view payload) {
  if (tag.size() != 4) throw Error("section tags are four bytes");
  out.raw(tag);
  out.u64(payload.size());
  out.raw(payload);
}

std::string seal_artifact(std::string_view magic, std::uint32_t version, std::string_view payload) {
  ByteWriter w;
  w.raw(magic);
  w.u32(version);
  w.raw(payload);
  const auto digest = sha256_raw(w.bytes());
  w.raw(std::string_view(reinterpret_cast<const char*>(digest.data()), digest.size()));
  return w.take();
}

std::string_view open_artifact(std::string_view bytes, std::string_view magic,
                               std::uint32_t version) {
  if (bytes.size() < magic.size() + 4 + 32 || bytes.substr(0, magic.size()) != magic) {
    // A short file with the right magic is a truncation, not a foreign file.
    if (bytes.size() >= magic.size() && bytes.substr(0, magic.size()) == magic)
      throw ChecksumError("artifact truncated");
    throw FormatError("not a recognised artifact (bad magic)");
  }
  const auto body = bytes.substr(0, bytes.size() - 32);
  const auto digest = sha256_raw(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), 32) != 0)
    throw ChecksumError("checksum mismatch (corrupted or truncated artifact)");
  ByteReader header(body.substr(magic.size(), 4));
  const auto found = header.u32();
  if (found != version)
    throw VersionError("unsupported artifact version " + std::to_string(found) + " (expected " +
                       std::to_string(version) + ")");
  return body.substr(magic.size() + 4);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace vbac
