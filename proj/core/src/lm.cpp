#include "cat/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cat/error.hpp"

namespace cat::lm {
namespace {

constexpr float kStopBias = -8.0f;

std::vector<float> narrow(std::span<const double> x) { return {x.begin(), x.end()}; }
std::vector<double> widen(std::span<const float> x) { return {x.begin(), x.end()}; }

std::vector<float> norm_row(const nnf::RmsNorm& norm, std::span<const float> row) {
  const auto wide = widen(row);
  std::vector<double> out(wide.size());
  norm.apply(wide, out);
  return narrow(out);
}

void check_token(int token, int limit, const char* what) {
  require(token >= 0 && token < limit, std::string(what) + " token " + std::to_string(token) + " outside [0, " +
                                           std::to_string(limit) + ")");
}

std::span<const float> text_row(const ArModel& m, int token) {
  check_token(token, kTextEmbeddingRows, "text");
  return m.text_embedding.row(static_cast<std::size_t>(token));
}

void check_audio(const TokenMatrix& audio, int k_hat, const char* what) {
  if (audio.frames() == 0) return;
  require(static_cast<int>(audio.depth()) >= k_hat, std::string(what) + " has depth " +
                                                        std::to_string(audio.depth()) + " < active depth " +
                                                        std::to_string(k_hat));
}

std::size_t argmax(std::span<const double> v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

int psd_sample(const PsdConfig& cfg, std::mt19937_64& rng) {
  require(cfg.n_q >= 1, "psd_sample: n_q must be at least 1");
  require(cfg.p >= 0.0 && cfg.p <= 1.0, "psd_sample: p must lie in [0, 1]");
  if (cfg.n_q == 1) return 1;
  std::bernoulli_distribution gate(cfg.p);
  if (!gate(rng)) return cfg.n_q;
  std::uniform_int_distribution<int> prefix(1, cfg.n_q - 1);
  return prefix(rng);
}

ArConfig ArConfig::desk() { return ArConfig{}; }

void ArConfig::validate() const {
  require(n_q >= 1, "ArConfig: n_q must be at least 1");
  require(codebook_size >= 2, "ArConfig: codebook_size must be at least 2");
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "ArConfig: d_model must divide into n_heads");
  require((d_model / n_heads) % 2 == 0, "ArConfig: head_dim must be even");
  require(temporal_blocks >= 1 && depth_blocks >= 1, "ArConfig: block counts must be positive");
  require(latent_dim >= 1, "ArConfig: latent_dim must be positive");
}

nnf::AttentionConfig ArConfig::temporal_attention() const {
  return nnf::AttentionConfig{n_heads, d_model / n_heads, nnf::kUnboundedWindow, 10000.0, true};
}

nnf::AttentionConfig ArConfig::depth_attention() const {
  return nnf::AttentionConfig{n_heads, d_model / n_heads, nnf::kUnboundedWindow, 10000.0, false};
}

ArModel ArModel::init(const ArConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nnf::ParamRng rng(seed);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  ArModel m;
  m.cfg = cfg;
  m.text_embedding = MatrixF(kTextEmbeddingRows, d);
  rng.fill_normal(m.text_embedding.values(), 1.0);
  for (int k = 0; k < cfg.n_q; ++k) {
    MatrixF table(static_cast<std::size_t>(cfg.codebook_size + (k == 0 ? 1 : 0)), d);
    rng.fill_normal(table.values(), emb_std);
    m.code_embedding.push_back(std::move(table));
  }
  m.temporal = nnf::make_stack(cfg.temporal_attention(), cfg.temporal_blocks, rng);
  m.temporal_norm.scale.assign(d, 1.0f);
  m.depth_in = nnf::make_linear(d, d, true, rng);
  m.depth_position = MatrixF(static_cast<std::size_t>(cfg.n_q + 1), d);
  rng.fill_normal(m.depth_position.values(), emb_std);
  m.depth = nnf::make_stack(cfg.depth_attention(), cfg.depth_blocks, rng);
  m.depth_norm.scale.assign(d, 1.0f);
  for (int k = 0; k < cfg.n_q; ++k) {
    const auto out = static_cast<std::size_t>(cfg.codebook_size + (k == 0 ? 1 : 0));
    nnf::LinearLayer head = nnf::make_linear(d, out, true, rng);
    if (k == 0) {
      // The stop logit starts as a bias only, so untrained models run to max_frames.
      auto row = head.weight.row(out - 1);
      std::fill(row.begin(), row.end(), 0.0f);
      head.bias[out - 1] = kStopBias;
    }
    m.heads.push_back(std::move(head));
  }
  m.text_head = nnf::make_linear(d, kByteVocab, true, rng);
  m.adapter = nnf::make_linear(static_cast<std::size_t>(cfg.latent_dim), d, true, rng);
  return m;
}

std::size_t ArModel::parameter_count() const {
  std::size_t n = text_embedding.size() + depth_position.size();
  for (const auto& t : code_embedding) n += t.size();
  n += temporal.parameter_count() + depth.parameter_count();
  n += temporal_norm.scale.size() + depth_norm.scale.size();
  n += depth_in.parameter_count() + text_head.parameter_count() + adapter.parameter_count();
  for (const auto& h : heads) n += h.parameter_count();
  return n;
}

std::vector<int> bytes_to_tokens(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

std::vector<double> aggregate_embeddings(const ArModel& model, std::span<const std::int32_t> frame_tokens) {
  require(!frame_tokens.empty() && frame_tokens.size() <= static_cast<std::size_t>(model.cfg.n_q),
          "aggregate_embeddings: depth " + std::to_string(frame_tokens.size()) + " outside [1, " +
              std::to_string(model.cfg.n_q) + "]");
  std::vector<double> out(static_cast<std::size_t>(model.cfg.d_model), 0.0);
  for (std::size_t k = 0; k < frame_tokens.size(); ++k) {
    check_token(frame_tokens[k], model.cfg.codebook_size, "audio");
    auto row = model.code_embedding[k].row(static_cast<std::size_t>(frame_tokens[k]));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += static_cast<double>(row[i]);
  }
  return out;
}

MatrixF temporal_inputs(const ArModel& model, const SequenceLayout& layout, int k_hat) {
  require(k_hat >= 1 && k_hat <= model.cfg.n_q, "temporal_inputs: K_hat outside [1, n_q]");
  check_audio(layout.prompt_audio, k_hat, "prompt audio");
  check_audio(layout.target_audio, k_hat, "target audio");
  if (layout.prompt_audio.frames() > 0 && layout.target_audio.frames() > 0) {
    require(layout.prompt_audio.depth() == layout.target_audio.depth(),
            "temporal_inputs: prompt and target audio have different depths");
  }
  MatrixF x(0, static_cast<std::size_t>(model.cfg.d_model));
  auto text = [&](int token) { x.append_row(text_row(model, token)); };
  text(kSegPromptText);
  for (int t : layout.prompt_text) text(t);
  text(kSegTargetText);
  for (int t : layout.target_text) text(t);
  text(kSegAudio);
  for (const TokenMatrix* audio : {&layout.prompt_audio, &layout.target_audio}) {
    for (std::size_t t = 0; t < audio->frames(); ++t) {
      const auto e = aggregate_embeddings(model, audio->row(t).first(static_cast<std::size_t>(k_hat)));
      x.append_row(narrow(e));
    }
  }
  return x;
}

MatrixF temporal_forward(const ArModel& model, const SequenceLayout& layout, int k_hat) {
  MatrixF h = model.temporal.forward(temporal_inputs(model, layout, k_hat));
  for (std::size_t t = 0; t < h.rows(); ++t) {
    const auto n = norm_row(model.temporal_norm, h.row(t));
    std::copy(n.begin(), n.end(), h.row(t).begin());
  }
  return h;
}

std::vector<float> temporal_step(const ArModel& model, TemporalState& state, std::span<const float> input) {
  const auto h = nnf::stack_step(model.temporal, state.stack, input);
  return norm_row(model.temporal_norm, h);
}

MatrixF depth_hidden(const ArModel& model, std::span<const float> h, std::span<const std::int32_t> prefix) {
  const auto d = static_cast<std::size_t>(model.cfg.d_model);
  require(h.size() == d, "depth_hidden: hidden width mismatch");
  require(prefix.size() < static_cast<std::size_t>(model.cfg.n_q), "depth_hidden: prefix longer than n_q - 1");
  MatrixF x(prefix.size() + 1, d);
  {
    auto row0 = model.depth_in.apply(widen(h));
    auto pos = model.depth_position.row(0);
    for (std::size_t i = 0; i < d; ++i) x(0, i) = static_cast<float>(row0[i] + static_cast<double>(pos[i]));
  }
  for (std::size_t j = 0; j < prefix.size(); ++j) {
    check_token(prefix[j], model.cfg.codebook_size, "depth prefix");
    auto e = model.code_embedding[j].row(static_cast<std::size_t>(prefix[j]));
    auto pos = model.depth_position.row(j + 1);
    for (std::size_t i = 0; i < d; ++i) {
      x(j + 1, i) = static_cast<float>(static_cast<double>(e[i]) + static_cast<double>(pos[i]));
    }
  }
  MatrixF y = model.depth.forward(x);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const auto n = norm_row(model.depth_norm, y.row(r));
    std::copy(n.begin(), n.end(), y.row(r).begin());
  }
  return y;
}

std::vector<double> depth_forward(const ArModel& model, std::span<const float> h,
                                  std::span<const std::int32_t> prefix) {
  const MatrixF y = depth_hidden(model, h, prefix);
  return model.heads[prefix.size()].apply(widen(y.row(y.rows() - 1)));
}

double nll(std::span<const double> logits, std::size_t classes, int target) {
  require(classes >= 1 && classes <= logits.size(), "nll: class count exceeds logits");
  require(target >= 0 && static_cast<std::size_t>(target) < classes, "nll: target out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < classes; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < classes; ++i) sum += std::exp(logits[i] - mx);
  return (mx + std::log(sum)) - logits[static_cast<std::size_t>(target)];
}

double ar_loss(const ArModel& model, const SequenceLayout& layout, int k_hat) {
  require(layout.target_audio.frames() > 0, "ar_loss: target audio is empty");
  const MatrixF h = temporal_forward(model, layout, k_hat);
  const std::size_t first = layout.audio_start() + layout.prompt_audio.frames();
  const auto classes = static_cast<std::size_t>(model.cfg.codebook_size);
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t t = 0; t < layout.target_audio.frames(); ++t) {
    const auto codes = layout.target_audio.row(t).first(static_cast<std::size_t>(k_hat));
    const MatrixF y = depth_hidden(model, h.row(first + t - 1), codes.first(codes.size() - 1));
    for (std::size_t k = 0; k < codes.size(); ++k) {
      const auto logits = model.heads[k].apply(widen(y.row(k)));
      total += nll(logits, classes, codes[k]);
      ++terms;
    }
  }
  return total / static_cast<double>(terms);
}

TokenMatrix generate(const ArModel& model, std::span<const int> prompt_text, std::span<const int> target_text,
                     const TokenMatrix& prompt_audio, const GenerateOptions& opts) {
  require(opts.depth >= 1 && opts.depth <= model.cfg.n_q,
          "generate: depth " + std::to_string(opts.depth) + " outside [1, " + std::to_string(model.cfg.n_q) + "]");
  require(opts.max_frames >= 0, "generate: max_frames must be nonnegative");
  require(opts.temperature >= 0.0 && std::isfinite(opts.temperature), "generate: temperature must be >= 0");
  const auto depth = static_cast<std::size_t>(opts.depth);

  SequenceLayout layout;
  layout.prompt_text.assign(prompt_text.begin(), prompt_text.end());
  layout.target_text.assign(target_text.begin(), target_text.end());
  if (prompt_audio.frames() > 0) {
    require(prompt_audio.depth() >= depth, "generate: prompt audio is shallower than the requested depth");
    layout.prompt_audio = prompt_audio.truncated(depth);
  }

  TemporalState state(model);
  const MatrixF inputs = temporal_inputs(model, layout, opts.depth);
  std::vector<float> h;
  for (std::size_t r = 0; r < inputs.rows(); ++r) h = temporal_step(model, state, inputs.row(r));

  std::mt19937_64 rng(opts.seed);
  const auto classes = static_cast<std::size_t>(model.cfg.codebook_size);
  TokenMatrix out(0, depth);
  std::vector<std::int32_t> frame;
  for (int f = 0; f < opts.max_frames; ++f) {
    frame.clear();
    for (std::size_t k = 0; k < depth; ++k) {
      const auto logits = depth_forward(model, h, frame);
      if (k == 0 && opts.allow_stop) {
        const double stop = logits[classes];
        bool halt = stop > 0.0;
        if (opts.temperature > 0.0) halt = std::bernoulli_distribution(1.0 / (1.0 + std::exp(-stop)))(rng);
        if (halt) return out;
      }
      std::size_t pick = 0;
      if (opts.temperature == 0.0) {
        pick = argmax(logits, classes);
      } else {
        const double mx = logits[argmax(logits, classes)];
        std::vector<double> weights(classes);
        for (std::size_t i = 0; i < classes; ++i) weights[i] = std::exp((logits[i] - mx) / opts.temperature);
        pick = static_cast<std::size_t>(std::discrete_distribution<int>(weights.begin(), weights.end())(rng));
      }
      frame.push_back(static_cast<std::int32_t>(pick));
    }
    out.append_frame(frame);
    h = temporal_step(model, state, narrow(aggregate_embeddings(model, frame)));
  }
  return out;
}

int task_token(std::string_view task) {
  if (task == "asr") return kTagAsr;
  if (task == "multi-speaker-asr") return kTagMultiSpeakerAsr;
  if (task == "caption") return kTagCaption;
  throw ContractError("unknown task tag '" + std::string(task) + "'");
}

std::vector<double> semantic_ce_terms(const ArModel& model, const SemanticBatch& batch) {
  const int tag = task_token(batch.task);
  require(!batch.target.empty(), "semantic_ce_loss: target text is empty");
  require(batch.quantized.rows() == 0 || batch.quantized.cols() == static_cast<std::size_t>(model.cfg.latent_dim),
          "semantic_ce_loss: quantized width does not match the adapter");
  for (int s : batch.target) check_token(s, kByteVocab, "target text");

  MatrixF x(0, static_cast<std::size_t>(model.cfg.d_model));
  x.append_row(text_row(model, tag));
  for (std::size_t t = 0; t < batch.quantized.rows(); ++t) x.append_row(narrow(model.adapter.apply(batch.quantized.row(t))));
  for (std::size_t i = 0; i + 1 < batch.target.size(); ++i) x.append_row(text_row(model, batch.target[i]));

  const MatrixF h = model.temporal.forward(x);
  const std::size_t first = batch.quantized.rows();  // position predicting target[0]
  std::vector<double> terms;
  terms.reserve(batch.target.size());
  for (std::size_t i = 0; i < batch.target.size(); ++i) {
    const auto n = norm_row(model.temporal_norm, h.row(first + i));
    const auto logits = model.text_head.apply(widen(n));
    terms.push_back(nll(logits, static_cast<std::size_t>(kByteVocab), batch.target[i]));
  }
  return terms;
}

double semantic_ce_loss(const ArModel& model, const SemanticBatch& batch) {
  double total = 0.0;
  for (double t : semantic_ce_terms(model, batch)) total += t;
  return total;
}

}  // namespace cat::lm
