#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cat/tokens.hpp"

namespace cat::bitstream {

inline constexpr std::array<char, 4> kMagic{'C', 'A', 'T', '1'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 25;

/// Little-endian on disk:
///   "CAT1" | version u8 | sample_rate u32 | samples_per_frame u16 | n_layers u8 |
///   bits_per_code u8 | n_frames u32 | original_len_samples u64
struct BitstreamHeader {
  std::uint8_t version = kVersion;
  std::uint32_t sample_rate = 24000;
  std::uint16_t samples_per_frame = 1920;
  std::uint8_t n_layers = 1;
  std::uint8_t bits_per_code = 10;
  std::uint32_t n_frames = 0;
  std::uint64_t original_len_samples = 0;

  std::uint64_t payload_bits() const {
    return static_cast<std::uint64_t>(n_frames) * n_layers * bits_per_code;
  }
  double frame_rate() const { return static_cast<double>(sample_rate) / samples_per_frame; }

  friend bool operator==(const BitstreamHeader&, const BitstreamHeader&) = default;
};

/// Stream-level fields supplied by the caller; frame and layer counts come from the tokens.
struct StreamInfo {
  std::uint32_t sample_rate = 24000;
  std::uint16_t samples_per_frame = 1920;
  std::uint8_t bits_per_code = 10;
  std::uint64_t original_len_samples = 0;
};

struct Unpacked {
  BitstreamHeader header;
  TokenMatrix tokens;
};

/// ceil(log2(codebook_size)).
std::uint8_t bits_for_codebook(int codebook_size);

/// Header, then codes frame-major with the layer index innermost, MSB-first,
/// zero-padded to a byte only at the end of the stream.
std::vector<std::uint8_t> pack(const TokenMatrix& tokens, const StreamInfo& info);

/// Throws FormatError on bad magic/version, inconsistent header, or a body
/// whose length does not match the header.
Unpacked unpack(std::span<const std::uint8_t> bytes);

BitstreamHeader read_header(std::span<const std::uint8_t> bytes);

/// Keeps layers 1..depth of every frame.
std::vector<std::uint8_t> truncate_to_depth(std::span<const std::uint8_t> bytes, int depth);

/// n_layers * ceil(log2(codebook_size)) * frame_rate.
double bitrate(int n_layers, int codebook_size, double frame_rate);

}  // namespace cat::bitstream
