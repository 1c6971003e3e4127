#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cat/nnf.hpp"
#include "cat/tensor.hpp"
#include "cat/tokens.hpp"

namespace cat::lm {

// Text vocabulary: raw bytes 0..255, then segment markers and task tags.
inline constexpr int kByteVocab = 256;
inline constexpr int kSegPromptText = 256;
inline constexpr int kSegTargetText = 257;
inline constexpr int kSegAudio = 258;
inline constexpr int kTagAsr = 259;
inline constexpr int kTagMultiSpeakerAsr = 260;
inline constexpr int kTagCaption = 261;
inline constexpr int kTextEmbeddingRows = 262;

struct PsdConfig {
  double p = 0.0;
  int n_q = 8;
};

/// z ~ Bernoulli(p); K_hat = n_q when z = 0, else K ~ U{1..n_q-1}. n_q = 1 gives 1.
int psd_sample(const PsdConfig& cfg, std::mt19937_64& rng);

struct ArConfig {
  int n_q = 8;
  int codebook_size = 1024;
  int d_model = 128;
  int n_heads = 4;
  int temporal_blocks = 2;
  int depth_blocks = 4;
  int latent_dim = 96;  // width of the quantized features fed to the semantic adapter

  static ArConfig desk();
  void validate() const;
  nnf::AttentionConfig temporal_attention() const;
  nnf::AttentionConfig depth_attention() const;
};

/// Temporal transformer over [text, markers, audio frames] plus a depth
/// transformer over the RVQ layers of one frame.
struct ArModel {
  ArConfig cfg;
  MatrixF text_embedding;               // kTextEmbeddingRows x d
  std::vector<MatrixF> code_embedding;  // per layer, codebook_size x d (layer 0 has one extra stop row)
  nnf::TransformerStack temporal;
  nnf::RmsNorm temporal_norm;
  nnf::LinearLayer depth_in;  // h_t -> depth position 0
  MatrixF depth_position;     // (n_q + 1) x d, additive
  nnf::TransformerStack depth;
  nnf::RmsNorm depth_norm;
  std::vector<nnf::LinearLayer> heads;  // layer k: d -> codebook_size (layer 0: + 1 stop logit)
  nnf::LinearLayer text_head;           // d -> kByteVocab
  nnf::LinearLayer adapter;             // latent_dim -> d

  static ArModel init(const ArConfig& cfg, std::uint64_t seed);
  std::size_t parameter_count() const;
  int stop_token() const { return cfg.codebook_size; }
};

/// Segments in temporal order. Audio matrices may be deeper than the active
/// depth; only their first K_hat columns are read.
struct SequenceLayout {
  std::vector<int> prompt_text;
  std::vector<int> target_text;
  TokenMatrix prompt_audio;
  TokenMatrix target_audio;

  /// Index of the first prompt-audio position in the temporal stream.
  std::size_t audio_start() const { return prompt_text.size() + target_text.size() + 3; }
  std::size_t length() const { return audio_start() + prompt_audio.frames() + target_audio.frames(); }
};

std::vector<int> bytes_to_tokens(std::string_view text);

/// sum_{k < K_hat} Emb_k(tokens[k]), accumulated in f64 in layer order.
std::vector<double> aggregate_embeddings(const ArModel& model, std::span<const std::int32_t> frame_tokens);

/// Input embeddings for every temporal position.
MatrixF temporal_inputs(const ArModel& model, const SequenceLayout& layout, int k_hat);

/// Normalized hidden states, one row per temporal position.
MatrixF temporal_forward(const ArModel& model, const SequenceLayout& layout, int k_hat);

struct TemporalState {
  nnf::StackState stack;
  explicit TemporalState(const ArModel& model) : stack(model.temporal) {}
};

std::vector<float> temporal_step(const ArModel& model, TemporalState& state, std::span<const float> input);

/// Hidden rows of the depth transformer for [depth_in(h), Emb_1(q_1), ..., Emb_j(q_j)].
/// Row r carries the prediction for layer r + 1.
MatrixF depth_hidden(const ArModel& model, std::span<const float> h, std::span<const std::int32_t> prefix);

/// Logits for layer prefix.size() + 1 (codebook_size entries, plus the stop
/// logit last when predicting layer 1).
std::vector<double> depth_forward(const ArModel& model, std::span<const float> h,
                                  std::span<const std::int32_t> prefix);

/// -log softmax(logits)[target] over the first `classes` logits.
double nll(std::span<const double> logits, std::size_t classes, int target);

/// Mean NLL of target-audio codes at layers 1..K_hat.
double ar_loss(const ArModel& model, const SequenceLayout& layout, int k_hat);

struct GenerateOptions {
  int depth = 8;  // K_infer
  int max_frames = 16;
  double temperature = 0.0;  // 0 selects greedy decoding
  std::uint64_t seed = 0;
  bool allow_stop = true;
};

TokenMatrix generate(const ArModel& model, std::span<const int> prompt_text, std::span<const int> target_text,
                     const TokenMatrix& prompt_audio, const GenerateOptions& opts);

struct SemanticBatch {
  std::string task;  // asr, multi-speaker-asr or caption
  MatrixD quantized;  // T x latent_dim
  std::vector<int> target;
};

int task_token(std::string_view task);

/// Per-token -log p(s_t | tag, q, s_<t).
std::vector<double> semantic_ce_terms(const ArModel& model, const SemanticBatch& batch);
double semantic_ce_loss(const ArModel& model, const SemanticBatch& batch);

}  // namespace cat::lm
