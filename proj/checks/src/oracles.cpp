#include "cat/checks/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace cat::checks {
namespace {

template <typename T>
double rel_diff_impl(std::span<const T> a, std::span<const T> b, double floor) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    if (!std::isfinite(x) || !std::isfinite(y)) return std::numeric_limits<double>::infinity();
    diff = std::max(diff, std::abs(x - y));
    scale = std::max(scale, std::abs(y));
  }
  return diff / std::max(scale, floor);
}

double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double inv_mel(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> rms(const std::vector<double>& x, std::span<const float> scale) {
  double s = 0.0;
  for (double v : x) s += v * v;
  const double r = 1.0 / std::sqrt(s / static_cast<double>(x.size()) + 1e-12);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * r * scale[i];
  return out;
}

std::vector<double> affine(const nnf::LinearLayer& l, const std::vector<double>& x) {
  std::vector<double> y(l.weight.rows());
  for (std::size_t r = 0; r < y.size(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) acc += static_cast<double>(l.weight(r, c)) * x[c];
    y[r] = acc + (l.bias.empty() ? 0.0 : static_cast<double>(l.bias[r]));
  }
  return y;
}

void rotate(std::vector<double>& v, std::size_t n_heads, double position, double base) {
  const std::size_t hd = v.size() / n_heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t j = 0; 2 * j < hd; ++j) {
      const double theta = position / std::pow(base, static_cast<double>(2 * j) / static_cast<double>(hd));
      double& a = v[h * hd + 2 * j];
      double& b = v[h * hd + 2 * j + 1];
      const double na = a * std::cos(theta) - b * std::sin(theta);
      const double nb = a * std::sin(theta) + b * std::cos(theta);
      a = na;
      b = nb;
    }
  }
}

}  // namespace

double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor) {
  return rel_diff_impl(a, b, floor);
}
double max_rel_diff(std::span<const float> a, std::span<const float> b, double floor) {
  return rel_diff_impl(a, b, floor);
}

std::vector<std::complex<double>> naive_dft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t m = (k * t) % n;
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  return out;
}

MatrixD oracle_stft_magnitude(std::span<const double> x, std::size_t window) {
  const std::size_t hop = window / 4;
  const std::size_t frames = x.size() < window ? 0 : (x.size() - window) / hop + 1;
  std::vector<double> hann(window);
  double energy = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    hann[i] = std::pow(std::sin(std::numbers::pi * static_cast<double>(i) / static_cast<double>(window)), 2);
    energy += hann[i] * hann[i];
  }
  MatrixD out(frames, window / 2 + 1);
  std::vector<double> buf(window);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < window; ++i) buf[i] = x[f * hop + i] * hann[i];
    const auto spec = naive_dft(buf);
    for (std::size_t k = 0; k <= window / 2; ++k) out(f, k) = std::abs(spec[k]) / std::sqrt(energy);
  }
  return out;
}

MatrixD oracle_mel_filterbank(std::size_t window, std::size_t n_mels, int sample_rate) {
  std::vector<double> hz(n_mels + 2);
  const double top = mel(sample_rate * 0.5);
  for (std::size_t i = 0; i < hz.size(); ++i) hz[i] = inv_mel(top * static_cast<double>(i) / (n_mels + 1.0));
  MatrixD fb(n_mels, window / 2 + 1);
  for (std::size_t k = 0; k <= window / 2; ++k) {
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(window);
    for (std::size_t m = 0; m < n_mels; ++m) {
      double w = 0.0;
      if (f > hz[m] && f <= hz[m + 1]) {
        w = (f - hz[m]) / (hz[m + 1] - hz[m]);
      } else if (f > hz[m + 1] && f < hz[m + 2]) {
        w = (hz[m + 2] - f) / (hz[m + 2] - hz[m + 1]);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

double oracle_mel_loss(std::span<const double> a, std::span<const double> b, int sample_rate) {
  double total = 0.0;
  std::size_t n_mels = 5;
  for (std::size_t window = 32; window <= 2048; window *= 2, n_mels *= 2) {
    const MatrixD fb = oracle_mel_filterbank(window, n_mels, sample_rate);
    const MatrixD sa = oracle_stft_magnitude(a, window);
    const MatrixD sb = oracle_stft_magnitude(b, window);
    if (sa.rows() == 0) continue;
    double sum = 0.0;
    for (std::size_t f = 0; f < sa.rows(); ++f) {
      for (std::size_t m = 0; m < n_mels; ++m) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t k = 0; k < fb.cols(); ++k) {
          ma += fb(m, k) * sa(f, k);
          mb += fb(m, k) * sb(f, k);
        }
        sum += std::abs(std::log(ma + 1e-5) - std::log(mb + 1e-5));
      }
    }
    total += sum / static_cast<double>(sa.rows() * n_mels);
  }
  return total;
}

MatrixD dense_block_forward(const nnf::TransformerBlock& block, const MatrixD& x) {
  const std::size_t T = x.rows(), d = x.cols();
  const auto H = static_cast<std::size_t>(block.cfg.n_heads);
  const std::size_t hd = d / H;
  std::vector<std::vector<double>> q(T), k(T), v(T), rows(T);
  for (std::size_t t = 0; t < T; ++t) {
    rows[t].assign(x.row(t).begin(), x.row(t).end());
    const auto n = rms(rows[t], block.norm1.scale);
    q[t] = affine(block.wq, n);
    k[t] = affine(block.wk, n);
    v[t] = affine(block.wv, n);
    if (block.cfg.rotary) {
      rotate(q[t], H, static_cast<double>(t), block.cfg.rope_base);
      rotate(k[t], H, static_cast<double>(t), block.cfg.rope_base);
    }
  }
  const auto w = static_cast<long long>(block.cfg.window_frames);
  MatrixD out(T, d);
  for (std::size_t h = 0; h < H; ++h) {
    // Full T x T score matrix with -inf outside the causal window.
    MatrixD scores(T, T, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < T; ++j) {
        const long long gap = static_cast<long long>(i) - static_cast<long long>(j);
        if (gap < 0 || gap >= w) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += q[i][h * hd + c] * k[j][h * hd + c];
        scores(i, j) = s / std::sqrt(static_cast<double>(hd));
      }
    }
    for (std::size_t i = 0; i < T; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < T; ++j) mx = std::max(mx, scores(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < T; ++j) z += std::exp(scores(i, j) - mx);
      for (std::size_t c = 0; c < hd; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < T; ++j) acc += std::exp(scores(i, j) - mx) / z * v[j][h * hd + c];
        out(i, h * hd + c) = acc;
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> attn(out.row(t).begin(), out.row(t).end());
    auto hres = affine(block.wo, attn);
    for (std::size_t i = 0; i < d; ++i) hres[i] += rows[t][i];
    auto up = affine(block.ffn_up, rms(hres, block.norm2.scale));
    for (double& u : up) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
    const auto down = affine(block.ffn_down, up);
    for (std::size_t i = 0; i < d; ++i) out(t, i) = hres[i] + down[i];
  }
  return out;
}

MatrixD dense_stack_forward(const nnf::TransformerStack& stack, const MatrixD& x) {
  MatrixD y = x;
  for (const auto& b : stack.blocks) y = dense_block_forward(b, y);
  return y;
}

int brute_force_nearest(const rvq::FactorizedCodebook& cb, std::span<const double> z) {
  std::vector<double> u(cb.w_in.rows(), 0.0);
  double norm = 0.0;
  for (std::size_t r = 0; r < u.size(); ++r) {
    for (std::size_t c = 0; c < z.size(); ++c) u[r] += cb.w_in(r, c) * z[c];
    norm += u[r] * u[r];
  }
  norm = std::max(std::sqrt(norm), 1e-8);
  for (double& x : u) x /= norm;
  std::vector<double> dist(cb.entries.rows());
  for (std::size_t e = 0; e < dist.size(); ++e) {
    double s = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) s += (u[j] - cb.entries(e, j)) * (u[j] - cb.entries(e, j));
    dist[e] = s;
  }
  return static_cast<int>(std::min_element(dist.begin(), dist.end()) - dist.begin());
}

KMeansResult kmeans(const MatrixD& x, int k, int restarts, std::uint64_t seed, int max_iter) {
  const std::size_t n = x.rows(), d = x.cols();
  const auto K = static_cast<std::size_t>(k);
  auto sq = [&](std::size_t i, const MatrixD& c, std::size_t j) {
    double s = 0.0;
    for (std::size_t a = 0; a < d; ++a) s += (x(i, a) - c(j, a)) * (x(i, a) - c(j, a));
    return s;
  };
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.mean_sq_error = std::numeric_limits<double>::infinity();
  for (int run = 0; run < restarts; ++run) {
    MatrixD c(K, d);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t a = 0; a < d; ++a) c(j, a) = x(pick, a);
      for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq(i, c, j));
      if (j + 1 < K) pick = std::discrete_distribution<std::size_t>(nearest.begin(), nearest.end())(rng);
    }
    std::vector<std::size_t> label(n, 0);
    for (int it = 0; it < max_iter; ++it) {
      bool changed = it == 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        for (std::size_t j = 1; j < K; ++j) {
          if (sq(i, c, j) < sq(i, c, arg)) arg = j;
        }
        changed = changed || arg != label[i];
        label[i] = arg;
      }
      if (!changed) break;
      MatrixD sum(K, d);
      std::vector<std::size_t> count(K, 0);
      for (std::size_t i = 0; i < n; ++i) {
        ++count[label[i]];
        for (std::size_t a = 0; a < d; ++a) sum(label[i], a) += x(i, a);
      }
      for (std::size_t j = 0; j < K; ++j) {
        if (count[j] == 0) continue;
        for (std::size_t a = 0; a < d; ++a) c(j, a) = sum(j, a) / static_cast<double>(count[j]);
      }
    }
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < K; ++j) m = std::min(m, sq(i, c, j));
      err += m;
    }
    err /= static_cast<double>(n);
    if (err < best.mean_sq_error) best = {c, err};
  }
  return best;
}

}  // namespace cat::checks
