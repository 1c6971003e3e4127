#pragma once

// Straightforward reference implementations used to cross-check the library.
// They share no code with the routines they check beyond the parameter structs.

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "cat/nnf.hpp"
#include "cat/rvq.hpp"
#include "cat/tensor.hpp"

namespace cat::checks {

/// max |a - b| / max(max |b|, floor).
double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor = 1e-30);
double max_rel_diff(std::span<const float> a, std::span<const float> b, double floor = 1e-30);

template <typename T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] == b[i])) return false;
  }
  return true;
}

/// O(n^2) DFT with exactly reduced twiddle angles.
std::vector<std::complex<double>> naive_dft(std::span<const double> x);

MatrixD oracle_stft_magnitude(std::span<const double> x, std::size_t window);
MatrixD oracle_mel_filterbank(std::size_t window, std::size_t n_mels, int sample_rate);
/// The seven-scale log-mel L1 loss, recomputed with naive DFTs.
double oracle_mel_loss(std::span<const double> a, std::span<const double> b, int sample_rate);

/// Block output from an explicit T x T masked score matrix, all in f64.
MatrixD dense_block_forward(const nnf::TransformerBlock& block, const MatrixD& x);
MatrixD dense_stack_forward(const nnf::TransformerStack& stack, const MatrixD& x);

/// Index of the entry nearest to normalize(w_in z), by exhaustive search in f64.
int brute_force_nearest(const rvq::FactorizedCodebook& cb, std::span<const double> z);

struct KMeansResult {
  MatrixD centers;
  double mean_sq_error = 0.0;  // mean over points of the squared distance to the nearest center
};

/// Lloyd iterations from k-means++ seeds; the best of `restarts` runs.
KMeansResult kmeans(const MatrixD& x, int k, int restarts, std::uint64_t seed, int max_iter = 200);

}  // namespace cat::checks
