#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cat {

inline constexpr int kCodecSampleRate = 24000;

/// Mono audio. Samples are nominally in [-1, 1] but are not clamped.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kCodecSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Parses RIFF/WAVE with PCM16 or IEEE float32 data. Multichannel input is
/// averaged down to mono. PCM16 is scaled by 1/32768.
/// Throws FormatError on malformed chunks and UnsupportedError on other encodings.
Waveform load_wav(std::span<const std::uint8_t> bytes);

/// Serializes as PCM16 mono little-endian. Samples are clamped to
/// [-1, 32767/32768] before rounding.
std::vector<std::uint8_t> save_wav(const Waveform& w);

Waveform read_wav_file(const std::filesystem::path& path);
void write_wav_file(const std::filesystem::path& path, const Waveform& w);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cat
