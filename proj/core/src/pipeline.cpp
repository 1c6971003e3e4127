#include "cat/pipeline.hpp"

#include <string>

#include "cat/codec.hpp"
#include "cat/error.hpp"
#include "cat/rvq.hpp"

namespace cat::pipeline {
namespace {

bitstream::StreamInfo stream_info(const CatModel& model, std::uint64_t original_len) {
  bitstream::StreamInfo info;
  info.sample_rate = static_cast<std::uint32_t>(model.codec.cfg.sample_rate);
  info.samples_per_frame = static_cast<std::uint16_t>(model.codec.cfg.samples_per_frame());
  info.bits_per_code = bitstream::bits_for_codebook(model.rvq.config().codebook_size);
  info.original_len_samples = original_len;
  return info;
}

}  // namespace

Encoded encode_waveform(const CatModel& model, const Waveform& w, int depth) {
  require(w.sample_rate == model.codec.cfg.sample_rate,
          "encode: sample rate " + std::to_string(w.sample_rate) + " Hz, the codec needs " +
              std::to_string(model.codec.cfg.sample_rate) + " Hz");
  require(depth >= 1 && depth <= model.rvq.n_layers(),
          "encode: depth " + std::to_string(depth) + " outside [1, " + std::to_string(model.rvq.n_layers()) + "]");
  const int spf = model.codec.cfg.samples_per_frame();
  const codec::LatentSequence z = codec::encode(model.codec, codec::pad_to_frame(w, spf));
  Encoded e;
  e.tokens = rvq::rvq_encode(model.rvq, matrix_cast<double>(z.frames), depth).tokens;
  e.bytes = bitstream::pack(e.tokens, stream_info(model, w.samples.size()));
  e.bitrate = bitstream::bitrate(depth, model.rvq.config().codebook_size, model.codec.cfg.frame_rate());
  return e;
}

Waveform decode_tokens(const CatModel& model, const bitstream::Unpacked& stream) {
  const auto& h = stream.header;
  if (h.sample_rate != static_cast<std::uint32_t>(model.codec.cfg.sample_rate) ||
      h.samples_per_frame != model.codec.cfg.samples_per_frame()) {
    throw FormatError("CAT1: stream is " + std::to_string(h.sample_rate) + " Hz / " +
                      std::to_string(h.samples_per_frame) + " samples per frame, model expects " +
                      std::to_string(model.codec.cfg.sample_rate) + " / " +
                      std::to_string(model.codec.cfg.samples_per_frame()));
  }
  if (h.bits_per_code != bitstream::bits_for_codebook(model.rvq.config().codebook_size)) {
    throw FormatError("CAT1: bits_per_code " + std::to_string(h.bits_per_code) + " does not match the model");
  }
  if (h.n_layers > model.rvq.n_layers()) {
    throw FormatError("CAT1: stream has " + std::to_string(h.n_layers) + " layers, model has " +
                      std::to_string(model.rvq.n_layers()));
  }
  const int size = model.rvq.config().codebook_size;
  for (std::int32_t c : stream.tokens.codes()) {
    if (c >= size) throw FormatError("CAT1: code " + std::to_string(c) + " exceeds the codebook");
  }
  codec::LatentSequence z;
  z.frames = matrix_cast<float>(rvq::rvq_decode(model.rvq, stream.tokens));
  if (stream.tokens.frames() == 0) z.frames = MatrixF(0, static_cast<std::size_t>(model.codec.cfg.latent_dim()));
  z.frame_rate = model.codec.cfg.frame_rate();
  Waveform w = codec::decode(model.codec, z);
  w.samples.resize(static_cast<std::size_t>(h.original_len_samples));
  return w;
}

Waveform decode_bitstream(const CatModel& model, std::span<const std::uint8_t> bytes) {
  return decode_tokens(model, bitstream::unpack(bytes));
}

lm::ArModel make_desk_ar_model(const CatModel& model, std::uint64_t seed) {
  lm::ArConfig cfg = lm::ArConfig::desk();
  cfg.n_q = model.rvq.n_layers();
  cfg.codebook_size = model.rvq.config().codebook_size;
  cfg.latent_dim = model.codec.cfg.latent_dim();
  return lm::ArModel::init(cfg, seed);
}

TtsResult tts_simulate(const CatModel& model, const lm::ArModel& ar, std::string_view prompt_text,
                       std::string_view text, std::span<const std::uint8_t> prompt_stream, const TtsOptions& opts) {
  require(ar.cfg.n_q == model.rvq.n_layers() && ar.cfg.codebook_size == model.rvq.config().codebook_size,
          "ttssim: AR model token space does not match the quantizer");
  TokenMatrix prompt;
  if (!prompt_stream.empty()) prompt = bitstream::unpack(prompt_stream).tokens;

  lm::GenerateOptions g;
  g.depth = opts.depth;
  g.max_frames = opts.max_frames;
  g.temperature = opts.temperature;
  g.seed = opts.seed;

  TtsResult r;
  r.tokens = lm::generate(ar, lm::bytes_to_tokens(prompt_text), lm::bytes_to_tokens(text), prompt, g);
  const auto spf = static_cast<std::uint64_t>(model.codec.cfg.samples_per_frame());
  r.stream = bitstream::pack(r.tokens, stream_info(model, r.tokens.frames() * spf));
  r.waveform = decode_bitstream(model, r.stream);
  r.reencoded = encode_waveform(model, r.waveform, opts.depth).tokens;
  return r;
}

}  // namespace cat::pipeline
