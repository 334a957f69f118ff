#include <doctest.h>

#include <limits>

#include "vbac/errors.hpp"
#include "vbac/util.hpp"

using namespace vbac;

TEST_CASE("sha256 of a known vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("derived seeds are stable and label-specific") {
  CHECK(derive_seed(7, "split") == derive_seed(7, "split"));
  CHECK(derive_seed(7, "split") != derive_seed(7, "mlp"));
  CHECK(derive_seed(7, "split") != derive_seed(8, "split"));
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.9, 0.0, 5e-324}) CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
}

TEST_CASE("byte streams round-trip and reject truncation") {
  ByteWriter w;
  w.u8(3);
  w.u32(0xdeadbeef);
  w.u64(1ull << 60);
  w.i32(-5);
  w.f64(-0.0);
  w.str("hello");
  w.f64s(std::vector<double>{1.5, 2.5});
  w.strs({"a", "", "c"});
  ByteReader r(w.bytes());
  CHECK(r.u8() == 3);
  CHECK(r.u32() == 0xdeadbeef);
  CHECK(r.u64() == (1ull << 60));
  CHECK(r.i32() == -5);
  CHECK(std::signbit(r.f64()));
  CHECK(r.str() == "hello");
  CHECK(r.f64s() == std::vector<double>{1.5, 2.5});
  CHECK(r.strs() == std::vector<std::string>{"a", "", "c"});
  CHECK(r.done());
  CHECK_THROWS_AS(r.u8(), FormatError);

  ByteReader short_read(std::string_view(w.bytes()).substr(0, 3));
  short_read.u8();
  CHECK_THROWS_AS(short_read.u32(), FormatError);
}

TEST_CASE("sealed artifacts detect corruption, bad magic and bad version") {
  const std::string sealed = seal_artifact("TESTMAGC", 2, "payload");
  CHECK(open_artifact(sealed, "TESTMAGC", 2) == "payload");

  std::string flipped = sealed;
  flipped[14] ^= 1;
  CHECK_THROWS_AS(open_artifact(flipped, "TESTMAGC", 2), ChecksumError);
  CHECK_THROWS_AS(open_artifact(sealed.substr(0, sealed.size() - 1), "TESTMAGC", 2), FormatError);
  CHECK_THROWS_AS(open_artifact(sealed, "OTHERMAG", 2), FormatError);
  CHECK_THROWS_AS(open_artifact(sealed, "TESTMAGC", 3), VersionError);
}

TEST_CASE("csv tokenizer handles quotes") {
  CHECK(split_csv_line("a,b,,c") == std::vector<std::string>{"a", "b", "", "c"});
  CHECK(split_csv_line(R"("x,y","say ""hi""",z)") == std::vector<std::string>{"x,y", "say \"hi\"", "z"});
  CHECK(split_csv_line("") == std::vector<std::string>{""});
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(split_csv_line(csv_escape("q\"uote")) == std::vector<std::string>{"q\"uote"});
}

TEST_CASE("sigmoid helpers are stable in the tails") {
  CHECK(sigmoid(0) == 0.5);
  CHECK(sigmoid(-800) >= 0);
  CHECK(sigmoid(800) == 1.0);
  CHECK(log_sigmoid(-800) == doctest::Approx(-800));
  CHECK(log_sigmoid(40) == doctest::Approx(-std::exp(-40.0)));
}
