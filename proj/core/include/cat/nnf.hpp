#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "cat/tensor.hpp"

namespace cat::nnf {

/// Deterministic parameter source. Same seed, same draws on a given toolchain.
class ParamRng {
 public:
  explicit ParamRng(std::uint64_t seed) : engine_(seed) {}

  void fill_normal(std::span<float> out, double stddev);
  double normal(double stddev);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

struct LinearLayer {
  MatrixF weight;           // out x in
  std::vector<float> bias;  // empty, or out entries

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  /// out = weight * in + bias, accumulated in f64.
  void apply(std::span<const double> in, std::span<double> out) const;
  std::vector<double> apply(std::span<const double> in) const;

  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  template <typename F>
  void for_each_tensor(F&& f) {
    f(weight.values());
    if (!bias.empty()) f(std::span<float>(bias));
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    f(weight.values());
    if (!bias.empty()) f(std::span<const float>(bias));
  }
};

/// N(0, 1/in_dim) weights, zero bias.
LinearLayer make_linear(std::size_t in_dim, std::size_t out_dim, bool with_bias, ParamRng& rng);

/// x / sqrt(mean(x^2) + eps), no learned scale.
void rms_normalize(std::span<const double> x, std::span<double> out);
inline constexpr double kRmsEps = 1e-12;

struct RmsNorm {
  std::vector<float> scale;

  void apply(std::span<const double> x, std::span<double> out) const;
};

/// Rotates (x[2j], x[2j+1]) by position * base^(-2j / head_dim).
void rope_apply(std::span<double> head, std::int64_t position, double base);

/// rope_apply on each head of a concatenated n_heads x head_dim vector.
void rope_apply_heads(std::span<double> frame, std::size_t n_heads, std::int64_t position, double base);

double gelu(double x);

inline constexpr int kUnboundedWindow = std::numeric_limits<int>::max();

struct AttentionConfig {
  int n_heads = 1;
  int head_dim = 2;
  int window_frames = kUnboundedWindow;  // attend to [t - window + 1, t]
  double rope_base = 10000.0;
  bool rotary = true;

  int model_dim() const { return n_heads * head_dim; }
  void validate() const;
  friend bool operator==(const AttentionConfig&, const AttentionConfig&) = default;
};

/// Pre-norm block: x + o(attn(norm1 x)), then h + down(gelu(up(norm2 h))).
struct TransformerBlock {
  AttentionConfig cfg;
  RmsNorm norm1;
  LinearLayer wq, wk, wv, wo;
  RmsNorm norm2;
  LinearLayer ffn_up, ffn_down;

  std::size_t model_dim() const { return static_cast<std::size_t>(cfg.model_dim()); }
  std::size_t parameter_count() const;

  template <typename F>
  void for_each_tensor(F&& f) {
    f(std::span<float>(norm1.scale));
    for (auto* l : {&wq, &wk, &wv, &wo}) l->for_each_tensor(f);
    f(std::span<float>(norm2.scale));
    ffn_up.for_each_tensor(f);
    ffn_down.for_each_tensor(f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    f(std::span<const float>(norm1.scale));
    for (const auto* l : {&wq, &wk, &wv, &wo}) l->for_each_tensor(f);
    f(std::span<const float>(norm2.scale));
    ffn_up.for_each_tensor(f);
    ffn_down.for_each_tensor(f);
  }
};

TransformerBlock make_block(const AttentionConfig& cfg, ParamRng& rng);

/// Parameter count of make_block(cfg) without allocating it.
std::size_t block_parameter_count(const AttentionConfig& cfg);

/// Streaming cache for one block: rotated keys and values of the last
/// window_frames positions, oldest first.
struct BlockState {
  AttentionConfig cfg;
  std::deque<std::vector<double>> keys;
  std::deque<std::vector<double>> values;
  std::int64_t position = 0;

  explicit BlockState(const AttentionConfig& c) : cfg(c) {}
};

/// Causal sliding-window evaluation of a whole sequence (frames x d).
MatrixF block_forward(const TransformerBlock& block, const MatrixF& frames);

/// One position of block_forward, reading and updating the cache.
std::vector<float> block_step(const TransformerBlock& block, BlockState& state, std::span<const float> frame);

struct TransformerStack {
  std::vector<TransformerBlock> blocks;

  MatrixF forward(const MatrixF& frames) const;
  std::size_t parameter_count() const;
};

struct StackState {
  std::vector<BlockState> blocks;
  explicit StackState(const TransformerStack& stack);
};

std::vector<float> stack_step(const TransformerStack& stack, StackState& state, std::span<const float> frame);

TransformerStack make_stack(const AttentionConfig& cfg, int n_blocks, ParamRng& rng);

}  // namespace cat::nnf
