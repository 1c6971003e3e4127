#include "cat/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cat/error.hpp"
#include "json.hpp"

namespace cat::codec {

using nlohmann::json;

CodecConfig CodecConfig::desk() {
  CodecConfig c;
  c.stages = {{240, 2, 64, 4}, {2, 2, 64, 4}, {2, 2, 64, 4}, {2, 2, 96, 6}};
  return c;
}

CodecConfig CodecConfig::reference() {
  CodecConfig c;
  c.stages = {{240, 12, 768, 12}, {2, 12, 768, 12}, {2, 12, 768, 12}, {2, 32, 1280, 20}};
  return c;
}

void CodecConfig::validate() const {
  require(!stages.empty(), "CodecConfig: at least one stage required");
  require(sample_rate == kCodecSampleRate, "CodecConfig: only 24000 Hz is supported");
  require(window_seconds > 0.0, "CodecConfig: window_seconds must be positive");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string where = "CodecConfig stage " + std::to_string(i) + ": ";
    require(s.patch >= 1, where + "patch must be positive");
    require(s.n_blocks >= 1, where + "n_blocks must be positive");
    require(s.n_heads >= 1 && s.d_model >= 1, where + "d_model and n_heads must be positive");
    require(s.d_model % s.n_heads == 0, where + "d_model must be divisible by n_heads");
    require((s.d_model / s.n_heads) % 2 == 0, where + "head_dim must be even for rotary embeddings");
  }
}

int CodecConfig::samples_per_frame() const {
  int n = 1;
  for (const auto& s : stages) n *= s.patch;
  return n;
}

double CodecConfig::frame_rate() const { return static_cast<double>(sample_rate) / samples_per_frame(); }

double CodecConfig::stage_rate(std::size_t i) const {
  double rate = sample_rate;
  for (std::size_t j = 0; j <= i; ++j) rate /= stages[j].patch;
  return rate;
}

int CodecConfig::window_frames(std::size_t i) const {
  return std::max(1, static_cast<int>(std::llround(window_seconds * stage_rate(i))));
}

nnf::AttentionConfig CodecConfig::attention(std::size_t i) const {
  const auto& s = stages[i];
  nnf::AttentionConfig a;
  a.n_heads = s.n_heads;
  a.head_dim = s.d_model / s.n_heads;
  a.window_frames = window_frames(i);
  return a;
}

std::size_t CodecConfig::parameter_count() const {
  std::size_t n = 0;
  std::size_t prev = 1;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::size_t d = static_cast<std::size_t>(s.d_model);
    const std::size_t wide = static_cast<std::size_t>(s.patch) * prev;
    const std::size_t blocks = static_cast<std::size_t>(s.n_blocks) * nnf::block_parameter_count(attention(i));
    n += wide * d + d + blocks;     // encoder
    n += blocks + d * wide + wide;  // decoder
    prev = d;
  }
  return n;
}

std::string CodecConfig::to_json() const {
  json j;
  j["sample_rate"] = sample_rate;
  j["window_seconds"] = window_seconds;
  j["stages"] = json::array();
  for (const auto& s : stages) {
    j["stages"].push_back({{"patch", s.patch}, {"n_blocks", s.n_blocks}, {"d_model", s.d_model}, {"n_heads", s.n_heads}});
  }
  return j.dump();
}

CodecConfig CodecConfig::from_json(const std::string& text) {
  CodecConfig c;
  try {
    json j = json::parse(text);
    c.sample_rate = j.at("sample_rate").get<int>();
    c.window_seconds = j.at("window_seconds").get<double>();
    for (const auto& s : j.at("stages")) {
      c.stages.push_back({s.at("patch").get<int>(), s.at("n_blocks").get<int>(), s.at("d_model").get<int>(),
                          s.at("n_heads").get<int>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("codec config: ") + e.what());
  }
  c.validate();
  return c;
}

CodecParams CodecParams::init(const CodecConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nnf::ParamRng rng(seed);
  CodecParams p;
  p.cfg = cfg;
  std::size_t prev = 1;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    const std::size_t d = static_cast<std::size_t>(s.d_model);
    EncoderStage e;
    e.proj = nnf::make_linear(static_cast<std::size_t>(s.patch) * prev, d, true, rng);
    e.blocks = nnf::make_stack(cfg.attention(i), s.n_blocks, rng);
    p.encoder.push_back(std::move(e));
    prev = d;
  }
  prev = 1;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    DecoderStage dstage;
    dstage.blocks = nnf::make_stack(cfg.attention(i), s.n_blocks, rng);
    dstage.expand = nnf::make_linear(static_cast<std::size_t>(s.d_model), static_cast<std::size_t>(s.patch) * prev,
                                     true, rng);
    p.decoder.push_back(std::move(dstage));
    prev = static_cast<std::size_t>(s.d_model);
  }
  p.refresh_fingerprint();
  return p;
}

std::size_t CodecParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](auto t) { n += t.size(); });
  return n;
}

void CodecParams::refresh_fingerprint() {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  const std::string c = cfg.to_json();
  mix(c.data(), c.size());
  for_each_tensor([&](auto t) { mix(t.data(), t.size() * sizeof(float)); });
  fingerprint = h;
}

MatrixF patchify(const MatrixF& seq, int p) {
  require(p >= 1, "patchify: patch size must be positive");
  const auto pp = static_cast<std::size_t>(p);
  require(seq.rows() % pp == 0, "patchify: " + std::to_string(seq.rows()) + " rows not divisible by patch " +
                                    std::to_string(p));
  return MatrixF(seq.rows() / pp, seq.cols() * pp, std::vector<float>(seq.values().begin(), seq.values().end()));
}

MatrixF unpatchify(const MatrixF& seq, int p) {
  require(p >= 1, "unpatchify: patch size must be positive");
  const auto pp = static_cast<std::size_t>(p);
  require(seq.cols() % pp == 0, "unpatchify: width " + std::to_string(seq.cols()) + " not divisible by patch " +
                                    std::to_string(p));
  return MatrixF(seq.rows() * pp, seq.cols() / pp, std::vector<float>(seq.values().begin(), seq.values().end()));
}

Waveform pad_to_frame(const Waveform& w, int samples_per_frame) {
  require(samples_per_frame >= 1, "pad_to_frame: frame size must be positive");
  Waveform out = w;
  const auto spf = static_cast<std::size_t>(samples_per_frame);
  out.samples.resize((w.samples.size() + spf - 1) / spf * spf, 0.0);
  return out;
}

namespace {

std::vector<float> narrow(const std::vector<double>& v) { return {v.begin(), v.end()}; }

std::vector<double> widen(std::span<const float> v) { return {v.begin(), v.end()}; }

void check_input(const CodecParams& params, const Waveform& w) {
  require(w.sample_rate == params.cfg.sample_rate,
          "encode: sample rate " + std::to_string(w.sample_rate) + " Hz, codec expects " +
              std::to_string(params.cfg.sample_rate) + " Hz");
  const auto spf = static_cast<std::size_t>(params.cfg.samples_per_frame());
  require(w.samples.size() % spf == 0, "encode: length " + std::to_string(w.samples.size()) +
                                           " is not a multiple of " + std::to_string(spf) + " (use pad_to_frame)");
}

}  // namespace

LatentSequence encode(const CodecParams& params, const Waveform& w) {
  check_input(params, w);
  const auto& cfg = params.cfg;
  const auto p0 = static_cast<std::size_t>(cfg.stages[0].patch);
  const std::size_t rows0 = w.samples.size() / p0;

  MatrixF x(rows0, static_cast<std::size_t>(cfg.stages[0].d_model));
  for (std::size_t r = 0; r < rows0; ++r) {
    std::span<const double> patch(w.samples.data() + r * p0, p0);
    auto y = narrow(params.encoder[0].proj.apply(patch));
    std::copy(y.begin(), y.end(), x.row(r).begin());
  }
  x = params.encoder[0].blocks.forward(x);

  for (std::size_t i = 1; i < cfg.stages.size(); ++i) {
    const MatrixF patched = patchify(x, cfg.stages[i].patch);
    MatrixF next(patched.rows(), static_cast<std::size_t>(cfg.stages[i].d_model));
    for (std::size_t r = 0; r < patched.rows(); ++r) {
      auto y = narrow(params.encoder[i].proj.apply(widen(patched.row(r))));
      std::copy(y.begin(), y.end(), next.row(r).begin());
    }
    x = params.encoder[i].blocks.forward(next);
  }
  return {std::move(x), cfg.frame_rate()};
}

Waveform decode(const CodecParams& params, const LatentSequence& z) {
  const auto& cfg = params.cfg;
  require(z.frames.empty() || z.frames.cols() == static_cast<std::size_t>(cfg.latent_dim()),
          "decode: latent width " + std::to_string(z.frames.cols()) + " != " + std::to_string(cfg.latent_dim()));
  for (float v : z.frames.values()) require(std::isfinite(v), "decode: non-finite latent value");

  Waveform out;
  out.sample_rate = cfg.sample_rate;
  if (z.frames.rows() == 0) return out;

  MatrixF x = z.frames;
  for (std::size_t i = cfg.stages.size(); i-- > 1;) {
    const auto& stage = params.decoder[i];
    const MatrixF h = stage.blocks.forward(x);
    MatrixF wide(h.rows(), stage.expand.out_dim());
    for (std::size_t r = 0; r < h.rows(); ++r) {
      auto y = narrow(stage.expand.apply(widen(h.row(r))));
      std::copy(y.begin(), y.end(), wide.row(r).begin());
    }
    x = unpatchify(wide, cfg.stages[i].patch);
  }
  const auto& first = params.decoder[0];
  const MatrixF h = first.blocks.forward(x);
  out.samples.reserve(h.rows() * first.expand.out_dim());
  for (std::size_t r = 0; r < h.rows(); ++r) {
    auto y = first.expand.apply(widen(h.row(r)));
    out.samples.insert(out.samples.end(), y.begin(), y.end());
  }
  return out;
}

EncoderState::EncoderState(const CodecParams& params)
    : fingerprint_(params.fingerprint), pending_(params.cfg.stages.size()) {
  for (const auto& s : params.encoder) stacks_.emplace_back(s.blocks);
}

DecoderState::DecoderState(const CodecParams& params) : fingerprint_(params.fingerprint) {
  for (const auto& s : params.decoder) stacks_.emplace_back(s.blocks);
}

std::vector<float> encode_step(const CodecParams& params, EncoderState& state, std::span<const double> chunk) {
  require(state.fingerprint_ == params.fingerprint, "encode_step: state belongs to different codec parameters");
  const auto& cfg = params.cfg;
  const auto spf = static_cast<std::size_t>(cfg.samples_per_frame());
  require(chunk.size() == spf, "encode_step: chunk has " + std::to_string(chunk.size()) + " samples, expected " +
                                   std::to_string(spf));

  const auto p0 = static_cast<std::size_t>(cfg.stages[0].patch);
  // Outputs of the current stage, fed as inputs to the next.
  std::vector<std::vector<float>> produced;
  for (std::size_t off = 0; off < spf; off += p0) {
    auto y = narrow(params.encoder[0].proj.apply(chunk.subspan(off, p0)));
    produced.push_back(nnf::stack_step(params.encoder[0].blocks, state.stacks_[0], y));
  }
  for (std::size_t i = 1; i < cfg.stages.size(); ++i) {
    const auto p = static_cast<std::size_t>(cfg.stages[i].patch);
    std::vector<std::vector<float>> next;
    auto& pending = state.pending_[i];
    for (const auto& v : produced) {
      pending.insert(pending.end(), v.begin(), v.end());
      if (pending.size() == p * v.size()) {
        auto y = narrow(params.encoder[i].proj.apply(widen(pending)));
        pending.clear();
        next.push_back(nnf::stack_step(params.encoder[i].blocks, state.stacks_[i], y));
      }
    }
    produced = std::move(next);
  }
  if (produced.size() != 1) throw InvariantError("encode_step: expected exactly one latent frame per chunk");
  return produced.front();
}

std::vector<double> decode_step(const CodecParams& params, DecoderState& state, std::span<const float> frame) {
  require(state.fingerprint_ == params.fingerprint, "decode_step: state belongs to different codec parameters");
  const auto& cfg = params.cfg;
  require(frame.size() == static_cast<std::size_t>(cfg.latent_dim()),
          "decode_step: latent width " + std::to_string(frame.size()) + " != " + std::to_string(cfg.latent_dim()));
  for (float v : frame) require(std::isfinite(v), "decode_step: non-finite latent value");

  std::vector<std::vector<float>> pending{std::vector<float>(frame.begin(), frame.end())};
  for (std::size_t i = cfg.stages.size(); i-- > 1;) {
    const auto& stage = params.decoder[i];
    const auto p = static_cast<std::size_t>(cfg.stages[i].patch);
    std::vector<std::vector<float>> next;
    for (const auto& v : pending) {
      auto h = nnf::stack_step(stage.blocks, state.stacks_[i], v);
      auto wide = narrow(stage.expand.apply(widen(h)));
      const std::size_t width = wide.size() / p;
      for (std::size_t k = 0; k < p; ++k) next.emplace_back(wide.begin() + k * width, wide.begin() + (k + 1) * width);
    }
    pending = std::move(next);
  }
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(cfg.samples_per_frame()));
  for (const auto& v : pending) {
    auto h = nnf::stack_step(params.decoder[0].blocks, state.stacks_[0], v);
    auto y = params.decoder[0].expand.apply(widen(h));
    samples.insert(samples.end(), y.begin(), y.end());
  }
  return samples;
}

}  // namespace cat::codec
