#include <cmath>
#include <random>

#include "cat/checks/oracles.hpp"
#include "cat/codec.hpp"
#include "cat/error.hpp"
#include "doctest.h"

using namespace cat;
using namespace cat::codec;

namespace {

CodecConfig tiny_config(double window_seconds = 10.0) {
  CodecConfig c;
  c.stages = {{4, 1, 8, 2}, {2, 1, 8, 2}, {3, 2, 12, 2}};
  c.window_seconds = window_seconds;
  return c;
}

Waveform noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.2);
  Waveform w;
  w.samples.resize(n);
  for (double& s : w.samples) s = d(rng);
  return w;
}

std::size_t block_count(std::size_t d) { return 12 * d * d + 11 * d; }

}  // namespace

TEST_CASE("patchify examples and round trip") {
  MatrixF seq(4, 1, std::vector<float>{1, 2, 3, 4});
  const MatrixF p = patchify(seq, 2);
  CHECK(p == MatrixF(2, 2, std::vector<float>{1, 2, 3, 4}));
  CHECK(patchify(seq, 1) == seq);
  CHECK(unpatchify(p, 2) == seq);

  MatrixF wide(6, 3);
  for (std::size_t i = 0; i < wide.size(); ++i) wide.values()[i] = static_cast<float>(i) * 0.5f;
  CHECK(unpatchify(patchify(wide, 3), 3) == wide);
  CHECK_THROWS_AS(patchify(MatrixF(5, 1), 2), ContractError);
  CHECK_THROWS_AS(unpatchify(MatrixF(2, 3), 2), ContractError);
}

TEST_CASE("desk and reference configurations") {
  const auto desk = CodecConfig::desk();
  CHECK(desk.samples_per_frame() == 1920);
  CHECK(desk.frame_rate() == 12.5);
  CHECK(desk.latent_dim() == 96);
  CHECK(desk.window_frames(0) == 1000);
  CHECK(desk.window_frames(1) == 500);
  CHECK(desk.window_frames(2) == 250);
  CHECK(desk.window_frames(3) == 125);

  const auto ref = CodecConfig::reference();
  const std::size_t expect = (240 * 768 + 768 + 12 * block_count(768)) + (12 * block_count(768) + 768 * 240 + 240) +
                             2 * ((2 * 768 * 768 + 768 + 12 * block_count(768)) +
                                  (12 * block_count(768) + 768 * 2 * 768 + 2 * 768)) +
                             (2 * 768 * 1280 + 1280 + 32 * block_count(1280)) +
                             (32 * block_count(1280) + 1280 * 2 * 768 + 2 * 768);
  CHECK(ref.parameter_count() == expect);
  CHECK(CodecParams::init(desk, 7).parameter_count() == desk.parameter_count());
  CHECK(CodecConfig::from_json(ref.to_json()) == ref);
  CHECK_THROWS_AS(CodecConfig::from_json("{}"), FormatError);
}

TEST_CASE("encode shapes and input contracts") {
  const auto params = CodecParams::init(CodecConfig::desk(), 7);
  Waveform w;
  w.samples.assign(1920 * 5, 0.0);
  const LatentSequence z = encode(params, w);
  CHECK(z.frames.rows() == 5);
  CHECK(z.frames.cols() == 96);
  CHECK(z.frame_rate == 12.5);
  for (float v : z.frames.values()) CHECK(std::isfinite(v));
  CHECK(encode(params, w).frames == z.frames);

  Waveform wrong_rate = w;
  wrong_rate.sample_rate = 16000;
  CHECK_THROWS_AS(encode(params, wrong_rate), ContractError);
  Waveform ragged = w;
  ragged.samples.pop_back();
  CHECK_THROWS_AS(encode(params, ragged), ContractError);
  CHECK(pad_to_frame(ragged, 1920).samples.size() == 1920 * 5);
  CHECK(pad_to_frame(Waveform{}, 1920).samples.empty());
}

TEST_CASE("streaming encode and decode match the batch passes") {
  for (double window : {10.0, 0.002}) {
    const auto params = CodecParams::init(tiny_config(window), 3);
    const int spf = params.cfg.samples_per_frame();
    const Waveform w = noise(static_cast<std::size_t>(spf) * 9, 4);
    const LatentSequence z = encode(params, w);
    EncoderState es(params);
    for (std::size_t t = 0; t < 9; ++t) {
      const auto frame = encode_step(params, es, std::span<const double>(w.samples).subspan(t * spf, spf));
      CHECK(checks::max_rel_diff(std::span<const float>(frame), z.frames.row(t)) <= 1e-5);
    }
    const Waveform y = decode(params, z);
    REQUIRE(y.samples.size() == w.samples.size());
    DecoderState ds(params);
    for (std::size_t t = 0; t < 9; ++t) {
      const auto chunk = decode_step(params, ds, z.frames.row(t));
      CHECK(checks::max_rel_diff(std::span<const double>(chunk),
                                 std::span<const double>(y.samples).subspan(t * spf, spf)) <= 1e-5);
    }
  }
}

TEST_CASE("encoder and decoder are causal") {
  const auto params = CodecParams::init(tiny_config(), 5);
  const int spf = params.cfg.samples_per_frame();
  Waveform w = noise(static_cast<std::size_t>(spf) * 6, 6);
  const LatentSequence z0 = encode(params, w);
  w.samples[static_cast<std::size_t>(spf) * 4 + 1] += 0.5;
  const LatentSequence z1 = encode(params, w);
  for (std::size_t t = 0; t < 4; ++t) CHECK(checks::bitwise_equal(z0.frames.row(t), z1.frames.row(t)));
  CHECK_FALSE(checks::bitwise_equal(z0.frames.row(4), z1.frames.row(4)));

  LatentSequence z2 = z0;
  z2.frames(3, 0) += 1.0f;
  const Waveform y0 = decode(params, z0);
  const Waveform y2 = decode(params, z2);
  const auto cut = static_cast<std::size_t>(spf) * 3;
  CHECK(checks::bitwise_equal(std::span<const double>(y0.samples).first(cut),
                              std::span<const double>(y2.samples).first(cut)));
}

TEST_CASE("decode shapes and contracts") {
  const auto params = CodecParams::init(CodecConfig::desk(), 7);
  LatentSequence z;
  z.frames = MatrixF(3, 96, 0.0f);
  const Waveform y = decode(params, z);
  CHECK(y.samples.size() == 5760);
  for (double v : y.samples) CHECK(std::isfinite(v));
  CHECK(decode(params, LatentSequence{MatrixF(0, 96), 12.5}).samples.empty());
  z.frames = MatrixF(3, 95);
  CHECK_THROWS_AS(decode(params, z), ContractError);
}

TEST_CASE("stream state is bound to its parameters") {
  const auto a = CodecParams::init(tiny_config(), 1);
  const auto b = CodecParams::init(tiny_config(), 2);
  CHECK(a.fingerprint != b.fingerprint);
  EncoderState es(a);
  std::vector<double> chunk(static_cast<std::size_t>(a.cfg.samples_per_frame()), 0.0);
  CHECK_THROWS_AS(encode_step(b, es, chunk), ContractError);
  std::vector<double> short_chunk(chunk.size() - 1, 0.0);
  CHECK_THROWS_AS(encode_step(a, es, short_chunk), ContractError);
  DecoderState ds(a);
  std::vector<float> frame(12, 0.0f);
  CHECK_THROWS_AS(decode_step(b, ds, frame), ContractError);
  std::vector<float> narrow(11, 0.0f);
  CHECK_THROWS_AS(decode_step(a, ds, narrow), ContractError);
}
