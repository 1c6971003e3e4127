#pragma once

#include <cstddef>
#include <vector>

#include "cat/tensor.hpp"
#include "cat/wav.hpp"

namespace cat {

/// One analysis resolution of the multi-scale mel loss.
struct SpectralScale {
  std::size_t window_len = 0;  // power of two in [32, 2048]
  std::size_t hop_len = 0;     // window_len / 4
  std::size_t n_mels = 0;
  int sample_rate = kCodecSampleRate;
  MatrixD filterbank;  // n_mels x (window_len / 2 + 1)

  std::size_t n_bins() const { return window_len / 2 + 1; }

  /// HTK mel triangles spanning 0 Hz to sample_rate / 2, unnormalized.
  static SpectralScale make(std::size_t window_len, std::size_t n_mels,
                            int sample_rate = kCodecSampleRate);
};

struct MelLossConfig {
  std::vector<SpectralScale> scales;
  double log_floor = 1e-5;

  /// Windows 2^5 .. 2^11 with 5 .. 320 mel bands.
  static MelLossConfig standard(int sample_rate = kCodecSampleRate);
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Number of complete frames; the incomplete tail is dropped.
std::size_t frame_count(std::size_t length, std::size_t window_len, std::size_t hop_len);

/// In-place radix-2 FFT over interleaved (re, im) pairs. n must be a power of two.
void fft_inplace(std::vector<double>& re, std::vector<double>& im);

/// |DFT(hann * frame)| / ||hann||_2 for each left-aligned frame; frames x bins.
MatrixD stft_magnitude(const Waveform& w, const SpectralScale& scale);

/// filterbank * magnitude per frame; frames x n_mels.
MatrixD mel_spectrogram(const Waveform& w, const SpectralScale& scale);

/// Sum over scales of mean |log(mel_x + floor) - log(mel_xr + floor)|.
/// Scales accumulate in ascending window order.
double multi_scale_mel_loss(const Waveform& x, const Waveform& xr, const MelLossConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

}  // namespace cat
