#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <random>
#include <vector>

#include "cat/checks/oracles.hpp"
#include "cat/error.hpp"
#include "cat/spectral.hpp"
#include "cat/wav.hpp"
#include "doctest.h"

using namespace cat;

namespace {

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void tag(std::vector<std::uint8_t>& b, const char* t) { b.insert(b.end(), t, t + 4); }

std::vector<std::uint8_t> make_wav(std::uint16_t format, std::uint16_t channels, std::uint16_t bits,
                                   const std::vector<std::uint8_t>& data, std::uint32_t rate = 24000) {
  std::vector<std::uint8_t> b;
  tag(b, "RIFF");
  put32(b, static_cast<std::uint32_t>(36 + data.size()));
  tag(b, "WAVE");
  tag(b, "fmt ");
  put32(b, 16);
  put16(b, format);
  put16(b, channels);
  put32(b, rate);
  put32(b, rate * channels * bits / 8);
  put16(b, static_cast<std::uint16_t>(channels * bits / 8));
  put16(b, bits);
  tag(b, "data");
  put32(b, static_cast<std::uint32_t>(data.size()));
  b.insert(b.end(), data.begin(), data.end());
  return b;
}

Waveform noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.3);
  Waveform w;
  w.samples.resize(n);
  for (double& s : w.samples) s = d(rng);
  return w;
}

Waveform cosine(std::size_t n, double freq) {
  Waveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(std::cos(2.0 * std::numbers::pi * freq * i / 24000.0));
  return w;
}

}  // namespace

TEST_CASE("load_wav converts PCM16 by dividing by 32768") {
  std::vector<std::uint8_t> data;
  for (std::int16_t v : {std::int16_t{0}, std::int16_t{16384}, std::int16_t{-16384}, std::int16_t{32767}}) {
    put16(data, static_cast<std::uint16_t>(v));
  }
  const Waveform w = load_wav(make_wav(1, 1, 16, data));
  REQUIRE(w.samples.size() == 4);
  CHECK(w.sample_rate == 24000);
  CHECK(w.samples[0] == 0.0);
  CHECK(w.samples[1] == 0.5);
  CHECK(w.samples[2] == -0.5);
  CHECK(w.samples[3] == 32767.0 / 32768.0);
}

TEST_CASE("load_wav averages channels of a float32 file") {
  std::vector<std::uint8_t> data;
  for (float f : {1.0f, 0.0f}) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put32(data, bits);
  }
  const Waveform w = load_wav(make_wav(3, 2, 32, data));
  REQUIRE(w.samples.size() == 1);
  CHECK(w.samples[0] == 0.5);
}

TEST_CASE("load_wav rejects malformed and unsupported input") {
  const auto good = make_wav(1, 1, 16, {0, 0});
  CHECK_THROWS_AS(load_wav(std::vector<std::uint8_t>(good.begin(), good.begin() + 20)), FormatError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(load_wav(bad_magic), FormatError);
  auto short_data = good;
  short_data.pop_back();
  CHECK_THROWS_AS(load_wav(short_data), FormatError);
  CHECK_THROWS_AS(load_wav(make_wav(1, 1, 8, {0, 0})), UnsupportedError);
  CHECK_THROWS_AS(load_wav(make_wav(6, 1, 8, {0, 0})), UnsupportedError);
}

TEST_CASE("save_wav round trips within one PCM16 step") {
  Waveform w;
  w.samples = {0.25};
  const Waveform r = load_wav(save_wav(w));
  REQUIRE(r.samples.size() == 1);
  CHECK(std::abs(r.samples[0] - 0.25) <= 1.0 / 32768.0);

  const Waveform n = noise(1000, 1);
  const Waveform rn = load_wav(save_wav(n));
  for (std::size_t i = 0; i < n.samples.size(); ++i) {
    const double expect = std::clamp(n.samples[i], -1.0, 32767.0 / 32768.0);
    CHECK(std::abs(rn.samples[i] - expect) <= 1.0 / 32768.0);
  }
}

TEST_CASE("save_wav handles empty input and clips over-range samples") {
  const auto empty = save_wav(Waveform{});
  CHECK(empty.size() == 44);
  CHECK(load_wav(empty).samples.empty());
  Waveform loud;
  loud.samples = {1.5, -1.5};
  const Waveform r = load_wav(save_wav(loud));
  CHECK(r.samples[0] == 32767.0 / 32768.0);
  CHECK(r.samples[1] == -1.0);
  Waveform bad;
  bad.samples = {std::nan("")};
  CHECK_THROWS_AS(save_wav(bad), ContractError);
}

TEST_CASE("loss configuration has seven scales with quarter hops") {
  const auto cfg = MelLossConfig::standard();
  REQUIRE(cfg.scales.size() == 7);
  std::size_t window = 32, mels = 5;
  for (const auto& s : cfg.scales) {
    CHECK(s.window_len == window);
    CHECK(s.hop_len == window / 4);
    CHECK(s.n_mels == mels);
    for (std::size_t m = 0; m < s.n_mels; ++m) {
      double sum = 0.0;
      for (double v : s.filterbank.row(m)) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(sum > 0.0);
    }
    window *= 2;
    mels *= 2;
  }
  CHECK_THROWS_AS(SpectralScale::make(48, 4), ContractError);
  CHECK_THROWS_AS(SpectralScale::make(4096, 4), ContractError);
}

TEST_CASE("filterbank matches the independent construction") {
  for (std::size_t window : {32u, 256u, 2048u}) {
    const auto s = SpectralScale::make(window, window / 32 * 5);
    const auto o = checks::oracle_mel_filterbank(window, s.n_mels, 24000);
    CHECK(checks::max_rel_diff(s.filterbank.values(), o.values()) <= 1e-12);
  }
}

TEST_CASE("stft of silence is zero and short input has no frames") {
  const auto s = SpectralScale::make(64, 10);
  Waveform zero;
  zero.samples.assign(300, 0.0);
  const MatrixD silent = stft_magnitude(zero, s);
  for (double v : silent.values()) CHECK(v == 0.0);
  Waveform short_w;
  short_w.samples.assign(63, 1.0);
  CHECK(stft_magnitude(short_w, s).rows() == 0);
  CHECK(mel_spectrogram(short_w, s).rows() == 0);
}

TEST_CASE("frame count drops the incomplete tail") {
  const auto s = SpectralScale::make(128, 20);
  for (std::size_t len : {0u, 127u, 128u, 159u, 160u, 1000u}) {
    Waveform w;
    w.samples.assign(len, 0.1);
    const std::size_t expect = len < 128 ? 0 : (len - 128) / 32 + 1;
    CHECK(stft_magnitude(w, s).rows() == expect);
  }
}

TEST_CASE("stft of a bin-centred cosine matches the direct DFT") {
  const auto s = SpectralScale::make(256, 40);
  const Waveform w = cosine(1024, 12.0 * 24000.0 / 256.0);
  const MatrixD fast = stft_magnitude(w, s);
  const MatrixD slow = checks::oracle_stft_magnitude(w.samples, 256);
  REQUIRE(fast.rows() == slow.rows());
  CHECK(checks::max_rel_diff(fast.values(), slow.values()) <= 1e-6);
  // Energy concentrates at bin 12 and its Hann neighbours.
  const auto row = fast.row(0);
  CHECK(row[12] > row[11]);
  CHECK(row[12] > row[13]);
}

TEST_CASE("stft is 1-homogeneous and satisfies Parseval for one frame") {
  const auto s = SpectralScale::make(512, 80);
  const Waveform w = noise(2048, 2);
  Waveform scaled = w;
  for (double& v : scaled.samples) v *= 3.25;
  const MatrixD a = stft_magnitude(w, s);
  const MatrixD b = stft_magnitude(scaled, s);
  std::vector<double> a_scaled(a.values().begin(), a.values().end());
  for (double& v : a_scaled) v *= 3.25;
  CHECK(checks::max_rel_diff(b.values(), a_scaled) <= 1e-12);

  Waveform one = noise(512, 3);
  const MatrixD m = stft_magnitude(one, s);
  const auto hann = hann_window(512);
  double energy = 0.0, window_sq = 0.0;
  for (std::size_t i = 0; i < 512; ++i) {
    energy += std::pow(one.samples[i] * hann[i], 2);
    window_sq += hann[i] * hann[i];
  }
  double spectral = 0.0;
  for (std::size_t k = 0; k <= 256; ++k) {
    const double weight = (k == 0 || k == 256) ? 1.0 : 2.0;
    spectral += weight * m(0, k) * m(0, k);
  }
  spectral *= window_sq / 512.0;
  CHECK(std::abs(spectral - energy) / energy <= 1e-9);
}

TEST_CASE("mel spectrogram of a tone sits in the bands covering it") {
  const auto s = SpectralScale::make(256, 40);
  const double freq = 32.0 * 24000.0 / 256.0;
  const Waveform w = cosine(256, freq);
  const MatrixD mel = mel_spectrogram(w, s);
  const MatrixD fb = checks::oracle_mel_filterbank(256, 40, 24000);
  const MatrixD mag = checks::oracle_stft_magnitude(w.samples, 256);
  double total = 0.0, covering = 0.0;
  std::size_t best = 0;
  for (std::size_t m = 0; m < 40; ++m) {
    double expect = 0.0;
    for (std::size_t k = 0; k < fb.cols(); ++k) expect += fb(m, k) * mag(0, k);
    CHECK(std::abs(mel(0, m) - expect) <= 1e-9 * std::max(1.0, expect));
    total += mel(0, m);
    if (fb(m, 32) > 0.0) covering += mel(0, m);
    if (mel(0, m) > mel(0, best)) best = m;
  }
  CHECK(fb(best, 32) > 0.0);
  CHECK(covering / total > 0.75);

  Waveform zero;
  zero.samples.assign(256, 0.0);
  const MatrixD silent = mel_spectrogram(zero, s);
  for (double v : silent.values()) CHECK(v == 0.0);
}

TEST_CASE("single-band mel is the filter-weighted magnitude sum") {
  const auto s = SpectralScale::make(64, 1);
  const Waveform w = noise(256, 4);
  const MatrixD mag = stft_magnitude(w, s);
  const MatrixD mel = mel_spectrogram(w, s);
  REQUIRE(mel.cols() == 1);
  for (std::size_t f = 0; f < mag.rows(); ++f) {
    double acc = 0.0;
    for (std::size_t k = 0; k < mag.cols(); ++k) acc += s.filterbank(0, k) * mag(f, k);
    CHECK(mel(f, 0) == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("multi-scale mel loss: identity, symmetry and dual implementation") {
  const auto cfg = MelLossConfig::standard();
  const Waveform x = noise(4096, 10);
  const Waveform y = noise(4096, 11);
  CHECK(multi_scale_mel_loss(x, x, cfg) == 0.0);
  const double xy = multi_scale_mel_loss(x, y, cfg);
  CHECK(xy > 0.0);
  CHECK(xy == multi_scale_mel_loss(y, x, cfg));
  const double oracle = checks::oracle_mel_loss(x.samples, y.samples, 24000);
  CHECK(std::abs(xy - oracle) / oracle <= 1e-9);

  Waveform shorter = y;
  shorter.samples.pop_back();
  CHECK_THROWS_AS(multi_scale_mel_loss(x, shorter, cfg), ContractError);
}
