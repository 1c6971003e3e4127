#include "cat/spectral.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string>

#include "cat/error.hpp"

namespace cat {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

std::size_t frame_count(std::size_t length, std::size_t window_len, std::size_t hop_len) {
  if (length < window_len || hop_len == 0) return 0;
  return (length - window_len) / hop_len + 1;
}

SpectralScale SpectralScale::make(std::size_t window_len, std::size_t n_mels, int sample_rate) {
  require(std::has_single_bit(window_len) && window_len >= 32 && window_len <= 2048,
          "SpectralScale: window length must be a power of two in [32, 2048], got " +
              std::to_string(window_len));
  require(n_mels > 0, "SpectralScale: n_mels must be positive");
  require(sample_rate > 0, "SpectralScale: sample rate must be positive");

  SpectralScale s;
  s.window_len = window_len;
  s.hop_len = window_len / 4;
  s.n_mels = n_mels;
  s.sample_rate = sample_rate;
  s.filterbank = MatrixD(n_mels, s.n_bins());

  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(window_len);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    double row_sum = 0.0;
    for (std::size_t k = 0; k < s.n_bins(); ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double up = (f - lo) / (mid - lo);
      const double down = (hi - f) / (hi - mid);
      const double weight = std::max(0.0, std::min(up, down));
      s.filterbank(m, k) = weight;
      row_sum += weight;
    }
    if (!(row_sum > 0.0)) {
      throw ContractError("SpectralScale: mel band " + std::to_string(m) + " covers no bins at window " +
                          std::to_string(window_len));
    }
  }
  return s;
}

MelLossConfig MelLossConfig::standard(int sample_rate) {
  MelLossConfig cfg;
  std::size_t n_mels = 5;
  for (int i = 5; i <= 11; ++i) {
    cfg.scales.push_back(SpectralScale::make(std::size_t{1} << i, n_mels, sample_rate));
    n_mels *= 2;
  }
  return cfg;
}

void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  require(im.size() == n && std::has_single_bit(n), "fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Twiddles from cos/sin directly; recurrence drifts at n = 2048.
        const double wr = std::cos(angle * static_cast<double>(k));
        const double wi = std::sin(angle * static_cast<double>(k));
        const std::size_t a = start + k, b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

MatrixD stft_magnitude(const Waveform& w, const SpectralScale& scale) {
  const std::size_t n = scale.window_len;
  const std::size_t frames = frame_count(w.samples.size(), n, scale.hop_len);
  MatrixD out(frames, scale.n_bins());
  if (frames == 0) return out;

  const auto window = hann_window(n);
  double norm_sq = 0.0;
  for (double v : window) norm_sq += v * v;
  const double inv_norm = 1.0 / std::sqrt(norm_sq);

  std::vector<double> re(n), im(n);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t offset = f * scale.hop_len;
    for (std::size_t i = 0; i < n; ++i) {
      re[i] = w.samples[offset + i] * window[i];
      im[i] = 0.0;
    }
    fft_inplace(re, im);
    for (std::size_t k = 0; k < scale.n_bins(); ++k) out(f, k) = std::hypot(re[k], im[k]) * inv_norm;
  }
  return out;
}

MatrixD mel_spectrogram(const Waveform& w, const SpectralScale& scale) {
  const MatrixD mag = stft_magnitude(w, scale);
  MatrixD mel(mag.rows(), scale.n_mels);
  for (std::size_t f = 0; f < mag.rows(); ++f) {
    auto spec = mag.row(f);
    for (std::size_t m = 0; m < scale.n_mels; ++m) {
      auto weights = scale.filterbank.row(m);
      double acc = 0.0;
      for (std::size_t k = 0; k < spec.size(); ++k) acc += weights[k] * spec[k];
      mel(f, m) = acc;
    }
  }
  return mel;
}

double multi_scale_mel_loss(const Waveform& x, const Waveform& xr, const MelLossConfig& cfg) {
  require(x.samples.size() == xr.samples.size(),
          "multi_scale_mel_loss: length mismatch (" + std::to_string(x.samples.size()) + " vs " +
              std::to_string(xr.samples.size()) + ")");
  require(x.sample_rate == xr.sample_rate, "multi_scale_mel_loss: sample rate mismatch");
  require(cfg.log_floor > 0.0, "multi_scale_mel_loss: log floor must be positive");

  double total = 0.0;
  for (const auto& scale : cfg.scales) {
    const MatrixD a = mel_spectrogram(x, scale);
    const MatrixD b = mel_spectrogram(xr, scale);
    if (a.empty()) continue;
    double acc = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      acc += std::abs(std::log(av[i] + cfg.log_floor) - std::log(bv[i] + cfg.log_floor));
    }
    total += acc / static_cast<double>(av.size());
  }
  return total;
}

}  // namespace cat
