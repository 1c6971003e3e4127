#include <random>
#include <string>
#include <vector>

#include "cat/bitstream.hpp"
#include "cat/error.hpp"
#include "doctest.h"

using namespace cat;
using namespace cat::bitstream;

namespace {

TokenMatrix random_tokens(std::size_t frames, std::size_t depth, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, size - 1);
  TokenMatrix t(frames, depth);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < depth; ++k) t.at(f, k) = pick(rng);
  }
  return t;
}

// Reads the body one bit at a time.
std::vector<int> read_codes(const std::vector<std::uint8_t>& bytes, std::size_t count, int bits) {
  std::vector<int> out;
  std::size_t pos = kHeaderBytes * 8;
  for (std::size_t i = 0; i < count; ++i) {
    int v = 0;
    for (int b = 0; b < bits; ++b, ++pos) v = (v << 1) | ((bytes[pos / 8] >> (7 - pos % 8)) & 1);
    out.push_back(v);
  }
  return out;
}

std::string error_of(std::span<const std::uint8_t> bytes) {
  try {
    unpack(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("single code is packed MSB first after the header") {
  TokenMatrix t(1, 1, 0b1010101010);
  const auto bytes = pack(t, {24000, 1920, 10, 1920});
  REQUIRE(bytes.size() == kHeaderBytes + 2);
  const std::vector<std::uint8_t> header = {'C', 'A', 'T', '1', 1, 0xC0, 0x5D, 0, 0, 0x80, 0x07, 1, 10,
                                            1,   0,   0,   0,   0x80, 0x07, 0, 0, 0, 0, 0, 0};
  CHECK(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + kHeaderBytes) == header);
  CHECK(bytes[25] == 0xAA);
  CHECK(bytes[26] == 0x80);
}

TEST_CASE("codes are frame-major with the layer innermost") {
  TokenMatrix t(2, 2);
  t.at(0, 0) = 1;
  t.at(0, 1) = 2;
  t.at(1, 0) = 3;
  t.at(1, 1) = 4;
  const auto bytes = pack(t, {24000, 1920, 3, 0});
  REQUIRE(bytes.size() == kHeaderBytes + 2);
  CHECK(bytes[25] == 0x29);
  CHECK(bytes[26] == 0xC0);
  CHECK(unpack(bytes).tokens == t);
}

TEST_CASE("random streams round trip and match a bit-level reader") {
  for (int size : {2, 3, 1000, 1024, 65536}) {
    const std::uint8_t bits = bits_for_codebook(size);
    const auto t = random_tokens(13, 7, size, static_cast<std::uint64_t>(size));
    const auto bytes = pack(t, {24000, 1920, bits, 13 * 1920 - 5});
    CHECK(bytes.size() == kHeaderBytes + (13 * 7 * bits + 7) / 8);
    const auto codes = read_codes(bytes, 13 * 7, bits);
    CHECK(std::vector<int>(t.codes().begin(), t.codes().end()) == codes);
    const auto u = unpack(bytes);
    CHECK(u.tokens == t);
    CHECK(u.header.original_len_samples == 13 * 1920 - 5);
    CHECK(u.header.n_layers == 7);
    CHECK(u.header.n_frames == 13);
  }
}

TEST_CASE("empty stream is a bare header") {
  const auto bytes = pack(TokenMatrix(0, 8), {24000, 1920, 10, 0});
  CHECK(bytes.size() == kHeaderBytes);
  const auto u = unpack(bytes);
  CHECK(u.tokens.frames() == 0);
  CHECK(u.header.n_layers == 8);
}

TEST_CASE("codebook bit widths and bitrates") {
  CHECK(bits_for_codebook(2) == 1);
  CHECK(bits_for_codebook(3) == 2);
  CHECK(bits_for_codebook(1024) == 10);
  CHECK(bits_for_codebook(1025) == 11);
  CHECK_THROWS_AS(bits_for_codebook(1), ContractError);
  CHECK(bitrate(32, 1024, 12.5) == 4000.0);
  CHECK(bitrate(6, 1024, 12.5) == 750.0);
  CHECK(bitrate(8, 1024, 12.5) == 1000.0);
  CHECK(bitrate(16, 1024, 12.5) == 2000.0);
  CHECK(bitrate(1, 2, 1.0) == 1.0);
}

TEST_CASE("packing rejects values that do not fit") {
  TokenMatrix t(1, 1, 8);
  CHECK_THROWS_AS(pack(t, {24000, 1920, 3, 0}), ContractError);
  TokenMatrix neg(1, 1, -1);
  CHECK_THROWS_AS(pack(neg, {24000, 1920, 3, 0}), ContractError);
  CHECK_THROWS_AS(pack(TokenMatrix(1, 1), {24000, 1920, 3, 1921}), ContractError);
  CHECK_THROWS_AS(pack(TokenMatrix(1, 1), {24000, 1920, 17, 0}), ContractError);
}

TEST_CASE("malformed streams are format errors") {
  const auto t = random_tokens(4, 3, 1024, 1);
  const auto bytes = pack(t, {24000, 1920, 10, 0});

  auto bad_magic = bytes;
  bad_magic[3] = '2';
  CHECK_THROWS_AS(unpack(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(unpack(bad_version), FormatError);
  auto zero_layers = bytes;
  zero_layers[11] = 0;
  CHECK_THROWS_AS(unpack(zero_layers), FormatError);
  CHECK_THROWS_AS(unpack(std::span<const std::uint8_t>(bytes).first(10)), FormatError);

  const auto body_cut = std::span<const std::uint8_t>(bytes).first(bytes.size() - 1);
  const std::string msg = error_of(body_cut);
  CHECK(msg.find("120") != std::string::npos);
  CHECK(msg.find("112") != std::string::npos);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(unpack(trailing), FormatError);
}

TEST_CASE("truncation keeps the leading layers") {
  const auto t = random_tokens(9, 8, 1024, 2);
  const auto bytes = pack(t, {24000, 1920, 10, 9 * 1920});
  for (int k = 1; k <= 8; ++k) {
    const auto cut = truncate_to_depth(bytes, k);
    CHECK(cut == pack(t.truncated(static_cast<std::size_t>(k)), {24000, 1920, 10, 9 * 1920}));
    CHECK(read_header(cut).n_layers == k);
  }
  CHECK(truncate_to_depth(bytes, 8) == bytes);
  CHECK_THROWS_AS(truncate_to_depth(bytes, 0), ContractError);
  CHECK_THROWS_AS(truncate_to_depth(bytes, 9), ContractError);
}
