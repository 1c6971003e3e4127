#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cat/nnf.hpp"
#include "cat/tensor.hpp"
#include "cat/wav.hpp"

namespace cat::codec {

struct StageConfig {
  int patch = 1;
  int n_blocks = 1;
  int d_model = 8;
  int n_heads = 1;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct CodecConfig {
  std::vector<StageConfig> stages;  // encoder order
  int sample_rate = kCodecSampleRate;
  double window_seconds = 10.0;

  /// Patches 240/2/2/2, dims 64/64/64/96, two blocks per stage.
  static CodecConfig desk();
  /// Patches 240/2/2/2, dims 768/768/768/1280, 12/12/12/32 blocks.
  static CodecConfig reference();

  void validate() const;
  int latent_dim() const { return stages.back().d_model; }
  int samples_per_frame() const;
  double frame_rate() const;
  /// Frame rate seen by the blocks of stage i.
  double stage_rate(std::size_t i) const;
  int window_frames(std::size_t i) const;
  nnf::AttentionConfig attention(std::size_t i) const;
  /// Analytic count for encoder + decoder; does not allocate weights.
  std::size_t parameter_count() const;

  std::string to_json() const;
  static CodecConfig from_json(const std::string& text);

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

/// Latent frames at the codec frame rate (T x latent_dim).
struct LatentSequence {
  MatrixF frames;
  double frame_rate = 12.5;
};

struct EncoderStage {
  nnf::LinearLayer proj;  // patch * d_prev -> d_model
  nnf::TransformerStack blocks;
};

struct DecoderStage {
  nnf::TransformerStack blocks;
  nnf::LinearLayer expand;  // d_model -> patch * d_prev
};

struct CodecParams {
  CodecConfig cfg;
  std::vector<EncoderStage> encoder;  // stage 0 first
  std::vector<DecoderStage> decoder;  // same indexing as encoder; run last to first
  std::uint64_t fingerprint = 0;

  static CodecParams init(const CodecConfig& cfg, std::uint64_t seed);
  std::size_t parameter_count() const;
  void refresh_fingerprint();

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& s : encoder) {
      s.proj.for_each_tensor(f);
      for (auto& b : s.blocks.blocks) b.for_each_tensor(f);
    }
    for (auto& s : decoder) {
      for (auto& b : s.blocks.blocks) b.for_each_tensor(f);
      s.expand.for_each_tensor(f);
    }
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const auto& s : encoder) {
      s.proj.for_each_tensor(f);
      for (const auto& b : s.blocks.blocks) b.for_each_tensor(f);
    }
    for (const auto& s : decoder) {
      for (const auto& b : s.blocks.blocks) b.for_each_tensor(f);
      s.expand.for_each_tensor(f);
    }
  }
};

/// Row j of the result is rows j*p .. j*p+p-1 concatenated.
MatrixF patchify(const MatrixF& seq, int p);
MatrixF unpatchify(const MatrixF& seq, int p);

/// Right-pads with zeros to a multiple of samples_per_frame.
Waveform pad_to_frame(const Waveform& w, int samples_per_frame);

LatentSequence encode(const CodecParams& params, const Waveform& w);
Waveform decode(const CodecParams& params, const LatentSequence& z);

class EncoderState {
 public:
  explicit EncoderState(const CodecParams& params);

 private:
  friend std::vector<float> encode_step(const CodecParams&, EncoderState&, std::span<const double>);
  std::uint64_t fingerprint_;
  std::vector<std::vector<float>> pending_;  // per stage, concatenated inputs awaiting a full patch
  std::vector<nnf::StackState> stacks_;
};

class DecoderState {
 public:
  explicit DecoderState(const CodecParams& params);

 private:
  friend std::vector<double> decode_step(const CodecParams&, DecoderState&, std::span<const float>);
  std::uint64_t fingerprint_;
  std::vector<nnf::StackState> stacks_;
};

/// Consumes exactly samples_per_frame samples and emits one latent frame.
std::vector<float> encode_step(const CodecParams& params, EncoderState& state, std::span<const double> chunk);

/// Consumes one latent frame and emits samples_per_frame samples.
std::vector<double> decode_step(const CodecParams& params, DecoderState& state, std::span<const float> frame);

}  // namespace cat::codec
