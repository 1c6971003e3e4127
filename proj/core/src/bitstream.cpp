#include "cat/bitstream.hpp"

#include <bit>
#include <string>

#include "cat/error.hpp"

namespace cat::bitstream {
namespace {

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void write(std::uint32_t value, unsigned bits) {
    for (unsigned i = bits; i-- > 0;) {
      if (fill_ == 0) out_.push_back(0);
      if ((value >> i) & 1u) out_.back() |= static_cast<std::uint8_t>(0x80u >> fill_);
      fill_ = (fill_ + 1) % 8;
    }
  }

 private:
  std::vector<std::uint8_t>& out_;
  unsigned fill_ = 0;  // bits used in the last byte
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint32_t read(unsigned bits) {
    std::uint32_t v = 0;
    for (unsigned i = 0; i < bits; ++i, ++pos_) {
      const std::uint8_t byte = in_[pos_ / 8];
      v = (v << 1) | ((byte >> (7 - pos_ % 8)) & 1u);
    }
    return v;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) v = static_cast<T>((v << 8) | in[offset + i]);
  return v;
}

void write_header(std::vector<std::uint8_t>& out, const BitstreamHeader& h) {
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(h.version);
  put_le<std::uint32_t>(out, h.sample_rate);
  put_le<std::uint16_t>(out, h.samples_per_frame);
  out.push_back(h.n_layers);
  out.push_back(h.bits_per_code);
  put_le<std::uint32_t>(out, h.n_frames);
  put_le<std::uint64_t>(out, h.original_len_samples);
}

std::vector<std::uint8_t> pack_with_header(const TokenMatrix& tokens, const BitstreamHeader& h) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + (h.payload_bits() + 7) / 8);
  write_header(out, h);
  BitWriter w(out);
  const std::uint32_t limit = 1u << h.bits_per_code;
  for (std::size_t t = 0; t < tokens.frames(); ++t) {
    for (std::size_t k = 0; k < tokens.depth(); ++k) {
      const std::int32_t code = tokens.at(t, k);
      require(code >= 0 && static_cast<std::uint32_t>(code) < limit,
              "pack: code " + std::to_string(code) + " at frame " + std::to_string(t) + ", layer " +
                  std::to_string(k) + " does not fit in " + std::to_string(h.bits_per_code) + " bits");
      w.write(static_cast<std::uint32_t>(code), h.bits_per_code);
    }
  }
  return out;
}

}  // namespace

std::uint8_t bits_for_codebook(int codebook_size) {
  require(codebook_size >= 2, "bits_for_codebook: codebook size must be at least 2");
  return static_cast<std::uint8_t>(std::bit_width(static_cast<unsigned>(codebook_size - 1)));
}

std::vector<std::uint8_t> pack(const TokenMatrix& tokens, const StreamInfo& info) {
  require(tokens.depth() >= 1 && tokens.depth() <= 255, "pack: depth must be in [1, 255]");
  require(tokens.frames() <= 0xFFFFFFFFull, "pack: too many frames");
  require(info.bits_per_code >= 1 && info.bits_per_code <= 16, "pack: bits_per_code must be in [1, 16]");
  require(info.samples_per_frame >= 1, "pack: samples_per_frame must be positive");
  BitstreamHeader h;
  h.sample_rate = info.sample_rate;
  h.samples_per_frame = info.samples_per_frame;
  h.n_layers = static_cast<std::uint8_t>(tokens.depth());
  h.bits_per_code = info.bits_per_code;
  h.n_frames = static_cast<std::uint32_t>(tokens.frames());
  h.original_len_samples = info.original_len_samples;
  require(h.original_len_samples <= static_cast<std::uint64_t>(h.n_frames) * h.samples_per_frame,
          "pack: original length exceeds n_frames * samples_per_frame");
  return pack_with_header(tokens, h);
}

BitstreamHeader read_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("CAT1: truncated header (" + std::to_string(bytes.size()) + " of " +
                      std::to_string(kHeaderBytes) + " bytes)");
  }
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (bytes[i] != static_cast<std::uint8_t>(kMagic[i])) throw FormatError("CAT1: bad magic");
  }
  BitstreamHeader h;
  h.version = bytes[4];
  if (h.version != kVersion) throw FormatError("CAT1: unsupported version " + std::to_string(h.version));
  h.sample_rate = get_le<std::uint32_t>(bytes, 5);
  h.samples_per_frame = get_le<std::uint16_t>(bytes, 9);
  h.n_layers = bytes[11];
  h.bits_per_code = bytes[12];
  h.n_frames = get_le<std::uint32_t>(bytes, 13);
  h.original_len_samples = get_le<std::uint64_t>(bytes, 17);
  if (h.n_layers < 1) throw FormatError("CAT1: n_layers must be at least 1");
  if (h.bits_per_code < 1 || h.bits_per_code > 16) throw FormatError("CAT1: bits_per_code outside [1, 16]");
  if (h.samples_per_frame < 1) throw FormatError("CAT1: samples_per_frame must be positive");
  if (h.original_len_samples > static_cast<std::uint64_t>(h.n_frames) * h.samples_per_frame) {
    throw FormatError("CAT1: original length exceeds n_frames * samples_per_frame");
  }
  return h;
}

Unpacked unpack(std::span<const std::uint8_t> bytes) {
  Unpacked u;
  u.header = read_header(bytes);
  const std::uint64_t bits = u.header.payload_bits();
  const std::uint64_t need = (bits + 7) / 8;
  const std::uint64_t have = bytes.size() - kHeaderBytes;
  if (have < need) {
    throw FormatError("CAT1: truncated body (expected " + std::to_string(bits) + " bits, have " +
                      std::to_string(have * 8) + ")");
  }
  if (have > need) {
    throw FormatError("CAT1: " + std::to_string(have - need) + " trailing bytes after " + std::to_string(bits) +
                      "-bit body");
  }
  u.tokens = TokenMatrix(u.header.n_frames, u.header.n_layers);
  BitReader r(bytes.subspan(kHeaderBytes));
  for (std::size_t t = 0; t < u.tokens.frames(); ++t) {
    for (std::size_t k = 0; k < u.tokens.depth(); ++k) {
      u.tokens.at(t, k) = static_cast<std::int32_t>(r.read(u.header.bits_per_code));
    }
  }
  return u;
}

std::vector<std::uint8_t> truncate_to_depth(std::span<const std::uint8_t> bytes, int depth) {
  Unpacked u = unpack(bytes);
  require(depth >= 1 && depth <= u.header.n_layers, "truncate_to_depth: depth " + std::to_string(depth) +
                                                        " outside [1, " + std::to_string(u.header.n_layers) + "]");
  BitstreamHeader h = u.header;
  h.n_layers = static_cast<std::uint8_t>(depth);
  return pack_with_header(u.tokens.truncated(static_cast<std::size_t>(depth)), h);
}

double bitrate(int n_layers, int codebook_size, double frame_rate) {
  require(n_layers >= 1 && frame_rate > 0.0, "bitrate: arguments must be positive");
  return static_cast<double>(n_layers) * bits_for_codebook(codebook_size) * frame_rate;
}

}  // namespace cat::bitstream
