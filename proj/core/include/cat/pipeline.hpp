#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cat/bitstream.hpp"
#include "cat/lm.hpp"
#include "cat/model_file.hpp"
#include "cat/tokens.hpp"
#include "cat/wav.hpp"

namespace cat::pipeline {

struct Encoded {
  TokenMatrix tokens;
  std::vector<std::uint8_t> bytes;  // CAT1 stream
  double bitrate = 0.0;
};

/// Pads to whole frames, encodes, quantizes to `depth` layers and packs.
Encoded encode_waveform(const CatModel& model, const Waveform& w, int depth);

/// Codes of a CAT1 stream back to a waveform trimmed to the original length.
Waveform decode_tokens(const CatModel& model, const bitstream::Unpacked& stream);
Waveform decode_bitstream(const CatModel& model, std::span<const std::uint8_t> bytes);

/// AR model whose token space matches the codec quantizer.
lm::ArModel make_desk_ar_model(const CatModel& model, std::uint64_t seed);

struct TtsOptions {
  int depth = 8;
  int max_frames = 16;
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

struct TtsResult {
  TokenMatrix tokens;                  // generated, depth = opts.depth
  std::vector<std::uint8_t> stream;    // packed generated tokens
  Waveform waveform;                   // decoded, frames * samples_per_frame samples
  TokenMatrix reencoded;               // waveform encoded again at the same depth
};

/// Text (and an optional CAT1 audio prompt) to tokens, stream and waveform.
TtsResult tts_simulate(const CatModel& model, const lm::ArModel& ar, std::string_view prompt_text,
                       std::string_view text, std::span<const std::uint8_t> prompt_stream, const TtsOptions& opts);

}  // namespace cat::pipeline
