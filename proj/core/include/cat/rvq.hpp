#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cat/tensor.hpp"
#include "cat/tokens.hpp"

namespace cat::rvq {

struct RvqConfig {
  int n_layers = 8;
  int codebook_size = 1024;
  int code_dim = 8;
  int d_model = 96;

  /// 32 layers of 1024 codes in an 8-dim factorized space.
  static RvqConfig reference(int d_model);
  void validate() const;
  std::string to_json() const;
  static RvqConfig from_json(const std::string& text);

  friend bool operator==(const RvqConfig&, const RvqConfig&) = default;
};

/// Lookup happens in a code_dim space: u = normalize(w_in z) is matched
/// against unit-norm entries, and the chosen entry is mapped back by w_out.
struct FactorizedCodebook {
  MatrixD w_in;     // code_dim x d_model
  MatrixD entries;  // codebook_size x code_dim, unit rows
  MatrixD w_out;    // d_model x code_dim

  std::size_t size() const { return entries.rows(); }
  std::size_t code_dim() const { return entries.cols(); }
  std::size_t d_model() const { return w_in.cols(); }
};

struct RvqStack {
  std::vector<FactorizedCodebook> layers;

  /// Random unit entries; w_in with orthonormal rows (or columns) and w_out = w_in^T.
  static RvqStack init(const RvqConfig& cfg, std::uint64_t seed);

  RvqConfig config() const;
  int n_layers() const { return static_cast<int>(layers.size()); }
  std::size_t d_model() const { return layers.empty() ? 0 : layers.front().d_model(); }

  /// Rounds every parameter to the nearest float so in-memory and
  /// serialized stacks agree exactly.
  void snap_to_float();

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      f(l.entries.values());
      f(l.w_in.values());
      f(l.w_out.values());
    }
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers) {
      f(l.entries.values());
      f(l.w_in.values());
      f(l.w_out.values());
    }
  }
};

inline constexpr double kNormEps = 1e-8;

struct LayerSelection {
  int index = 0;
  std::vector<double> q;              // w_out * entries[index]
  double latent_residual_norm = 0.0;  // ||u - entries[index]||
};

/// Nearest unit entry to normalize(w_in z); ties go to the lowest index.
LayerSelection quantize_layer(const FactorizedCodebook& cb, std::span<const double> z);

struct RvqEncoding {
  TokenMatrix tokens;
  MatrixD quantized;            // sum of the first `depth` layer outputs
  std::vector<MatrixD> inputs;  // z_c: residual entering layer c
  std::vector<MatrixD> outputs; // q_c(z_c)
};

/// Layer 0 sees z; layer c sees z_c = z_{c-1} - q_{c-1}.
RvqEncoding rvq_encode(const RvqStack& stack, const MatrixD& z, int depth);

MatrixD rvq_decode(const RvqStack& stack, const TokenMatrix& tokens);

/// w_out * entries[code] for column `layer` of tokens, per frame.
MatrixD layer_contribution(const RvqStack& stack, const TokenMatrix& tokens, int layer);

struct DropoutPolicy {
  double probability = 1.0;
};

/// With the policy probability, K ~ U{1..n_q}; otherwise K = n_q.
int dropout_sample(const DropoutPolicy& policy, int n_q, std::mt19937_64& rng);

/// sum_c ||z_c - sg(q_c)||^2 over all frames.
double commitment_loss(std::span<const MatrixD> z_inputs, std::span<const MatrixD> q_outputs);
/// sum_c ||sg(z_c) - q_c||^2; same value as the commitment loss, different gradient routing.
double codebook_loss(std::span<const MatrixD> z_inputs, std::span<const MatrixD> q_outputs);

struct GradSet {
  std::vector<MatrixD> entries;
  std::vector<MatrixD> w_in;
  std::vector<MatrixD> w_out;
  MatrixD z;

  static GradSet zeros_like(const RvqStack& stack, std::size_t frames);
};

/// Gradients of the two quantizer losses with the selected indices held fixed.
/// Commitment gradients reach only z (every q, including those inside the
/// residual chain, is stopped); codebook gradients reach only the layer that
/// produced q_c, with z_c stopped.
struct QuantizerGrads {
  double commitment = 0.0;
  double codebook = 0.0;
  GradSet from_commitment;
  GradSet from_codebook;

  GradSet combined(double commitment_weight = 1.0, double codebook_weight = 1.0) const;
};

QuantizerGrads quantizer_grads(const RvqStack& stack, const MatrixD& z, int depth);

struct TrainOptions {
  int steps = 500;
  double lr = 0.1;
  double lambda_cmt = 0.25;
  DropoutPolicy dropout{1.0};
  std::uint64_t seed = 0;
};

struct TrainResult {
  RvqStack stack;
  std::vector<double> loss_trace;  // per-frame objective before each step
  std::vector<int> depths;         // dropout depth drawn for each step
};

/// Projected gradient descent on L_code + lambda_cmt * L_cmt. Batches are
/// visited round-robin; entry rows touched by a step are renormalized.
/// Throws InvariantError if the objective goes non-finite.
TrainResult train_codebooks(RvqStack stack, std::span<const MatrixD> batches, const TrainOptions& opts);

/// Sets each layer's entries to farthest-point samples of its normalized
/// projected residuals, layer by layer. Used before training to avoid
/// starting with several clusters sharing one entry.
void seed_entries_from_features(RvqStack& stack, const MatrixD& features, std::mt19937_64& rng);

/// Mean over frames of ||z - quantized||^2 at the given depth.
double mean_quantization_error(const RvqStack& stack, const MatrixD& z, int depth);

struct UsageStats {
  std::vector<std::vector<std::size_t>> histograms;  // per layer
  std::vector<double> utilization;                   // distinct codes / codebook size
  std::vector<double> perplexity;                    // exp(entropy); 0 when no codes
};

UsageStats usage_stats(const TokenMatrix& tokens, int codebook_size);

}  // namespace cat::rvq
