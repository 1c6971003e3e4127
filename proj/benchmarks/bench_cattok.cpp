#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "cat/bitstream.hpp"
#include "cat/codec.hpp"
#include "cat/lm.hpp"
#include "cat/model_file.hpp"
#include "cat/rvq.hpp"
#include "cat/spectral.hpp"

namespace {

const cat::CatModel& desk() {
  static const cat::CatModel m = cat::make_desk_model(7);
  return m;
}

cat::Waveform noise(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 0.2);
  cat::Waveform w;
  w.samples.resize(n);
  for (double& s : w.samples) s = d(rng);
  return w;
}

void BM_CodecEncode(benchmark::State& state) {
  const auto w = noise(static_cast<std::size_t>(state.range(0)) * 1920);
  for (auto _ : state) benchmark::DoNotOptimize(cat::codec::encode(desk().codec, w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CodecEncode)->Arg(1)->Arg(16);

void BM_CodecDecodeStep(benchmark::State& state) {
  const std::vector<float> frame(96, 0.1f);
  cat::codec::DecoderState st(desk().codec);
  for (auto _ : state) benchmark::DoNotOptimize(cat::codec::decode_step(desk().codec, st, frame));
}
BENCHMARK(BM_CodecDecodeStep);

void BM_RvqEncode(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 1.0);
  cat::MatrixD z(64, 96);
  for (double& v : z.values()) v = d(rng);
  const int depth = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cat::rvq::rvq_encode(desk().rvq, z, depth));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_RvqEncode)->Arg(1)->Arg(8);

void BM_BitstreamRoundTrip(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 1023);
  cat::TokenMatrix t(750, 32);
  for (std::size_t f = 0; f < 750; ++f) {
    for (std::size_t k = 0; k < 32; ++k) t.at(f, k) = pick(rng);
  }
  for (auto _ : state) {
    const auto bytes = cat::bitstream::pack(t, {24000, 1920, 10, 750 * 1920});
    benchmark::DoNotOptimize(cat::bitstream::unpack(bytes));
  }
  state.SetItemsProcessed(state.iterations() * 750 * 32);
}
BENCHMARK(BM_BitstreamRoundTrip);

void BM_MelLoss(benchmark::State& state) {
  const auto cfg = cat::MelLossConfig::standard();
  const auto a = noise(24000);
  auto b = a;
  for (double& v : b.samples) v *= 0.9;
  for (auto _ : state) benchmark::DoNotOptimize(cat::multi_scale_mel_loss(a, b, cfg));
}
BENCHMARK(BM_MelLoss);

void BM_ArGenerateFrame(benchmark::State& state) {
  const auto ar = cat::lm::ArModel::init(cat::lm::ArConfig::desk(), 7);
  const auto text = cat::lm::bytes_to_tokens("benchmark");
  cat::lm::GenerateOptions opts;
  opts.depth = 8;
  opts.max_frames = 4;
  opts.allow_stop = false;
  for (auto _ : state) benchmark::DoNotOptimize(cat::lm::generate(ar, {}, text, cat::TokenMatrix(), opts));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_ArGenerateFrame);

}  // namespace
BENCHMARK_MAIN();
