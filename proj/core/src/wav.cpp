#include "cat/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "cat/error.hpp"

namespace cat {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("wav: truncated ") + what + " (need " + std::to_string(n) +
                        " bytes, have " + std::to_string(remaining()) + ")");
    }
  }
  std::uint16_t u16() {
    need(2, "field");
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "field");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  bool tag(const char* expected) {
    need(4, "tag");
    bool ok = std::memcmp(bytes_.data() + pos_, expected, 4) == 0;
    pos_ += 4;
    return ok;
  }
  std::string fourcc() {
    need(4, "chunk id");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { pos_ += std::min(n, remaining()); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

Waveform load_wav(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.remaining() < 12) throw FormatError("wav: truncated RIFF header");
  if (!in.tag("RIFF")) throw FormatError("wav: missing RIFF tag");
  in.u32();  // riff size; not trusted, chunks are walked instead
  if (!in.tag("WAVE")) throw FormatError("wav: missing WAVE tag");

  FmtChunk fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  while (in.remaining() > 0 && !have_data) {
    if (in.remaining() < 8) throw FormatError("wav: truncated chunk header");
    std::string id = in.fourcc();
    std::uint32_t size = in.u32();
    if (id == "fmt ") {
      if (size < 16) throw FormatError("wav: fmt chunk too small");
      auto body = in.take(size, "fmt chunk");
      ByteReader f(body);
      fmt.format = f.u16();
      fmt.channels = f.u16();
      fmt.sample_rate = f.u32();
      f.u32();  // byte rate
      f.u16();  // block align
      fmt.bits = f.u16();
      if (fmt.format == kFormatExtensible) {
        if (size < 40) throw FormatError("wav: extensible fmt chunk too small");
        f.u16();  // cb size
        f.u16();  // valid bits
        f.u32();  // channel mask
        fmt.format = f.u16();  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      data = in.take(size, "data chunk");
      have_data = true;
    } else {
      in.take(size, "chunk body");
    }
    if (size % 2 == 1) in.skip(1);
  }

  if (!have_fmt) throw FormatError("wav: missing fmt chunk");
  if (!have_data) throw FormatError("wav: missing data chunk");
  if (fmt.channels == 0) throw FormatError("wav: zero channels");
  if (fmt.sample_rate == 0) throw FormatError("wav: zero sample rate");

  std::size_t bytes_per_sample = 0;
  if (fmt.format == kFormatPcm && fmt.bits == 16) {
    bytes_per_sample = 2;
  } else if (fmt.format == kFormatFloat && fmt.bits == 32) {
    bytes_per_sample = 4;
  } else {
    throw UnsupportedError("wav: unsupported encoding (format " + std::to_string(fmt.format) +
                           ", " + std::to_string(fmt.bits) + " bits)");
  }

  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  if (data.size() % frame_bytes != 0) throw FormatError("wav: data size not a whole number of frames");
  const std::size_t n = data.size() / frame_bytes;

  Waveform w;
  w.sample_rate = static_cast<int>(fmt.sample_rate);
  w.samples.resize(n);
  const double inv_channels = 1.0 / fmt.channels;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const std::uint8_t* p = data.data() + i * frame_bytes + c * bytes_per_sample;
      if (bytes_per_sample == 2) {
        auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
        acc += static_cast<double>(v) / 32768.0;
      } else {
        std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
        acc += static_cast<double>(std::bit_cast<float>(bits));
      }
    }
    w.samples[i] = fmt.channels == 1 ? acc : acc * inv_channels;
  }
  return w;
}

std::vector<std::uint8_t> save_wav(const Waveform& w) {
  require(w.sample_rate > 0, "save_wav: sample rate must be positive");
  const std::size_t data_bytes = w.samples.size() * 2;
  require(data_bytes <= 0xFFFFFFFFull - 36, "save_wav: waveform too long for RIFF");

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, static_cast<std::uint32_t>(36 + data_bytes));
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, static_cast<std::uint32_t>(data_bytes));

  constexpr double kMax = 32767.0 / 32768.0;
  for (double s : w.samples) {
    require(std::isfinite(s), "save_wav: non-finite sample");
    double clamped = std::clamp(s, -1.0, kMax);
    auto q = static_cast<std::int16_t>(std::lround(clamped * 32768.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for " + path.string());
}

Waveform read_wav_file(const std::filesystem::path& path) { return load_wav(read_file_bytes(path)); }

void write_wav_file(const std::filesystem::path& path, const Waveform& w) {
  write_file_bytes(path, save_wav(w));
}

}  // namespace cat
