#include "cat/nnf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cat/error.hpp"

namespace cat::nnf {

void ParamRng::fill_normal(std::span<float> out, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : out) v = static_cast<float>(dist(engine_));
}

double ParamRng::normal(double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  return dist(engine_);
}

void LinearLayer::apply(std::span<const double> in, std::span<double> out) const {
  require(in.size() == in_dim(), "LinearLayer: input width " + std::to_string(in.size()) + " != " +
                                     std::to_string(in_dim()));
  require(out.size() == out_dim(), "LinearLayer: output width mismatch");
  const std::size_t n = in_dim();
  const std::size_t n4 = n - n % 4;
  for (std::size_t r = 0; r < out_dim(); ++r) {
    const float* w = weight.row(r).data();
    // Four interleaved partial sums in a fixed order.
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    for (std::size_t c = 0; c < n4; c += 4) {
      a0 += static_cast<double>(w[c]) * in[c];
      a1 += static_cast<double>(w[c + 1]) * in[c + 1];
      a2 += static_cast<double>(w[c + 2]) * in[c + 2];
      a3 += static_cast<double>(w[c + 3]) * in[c + 3];
    }
    for (std::size_t c = n4; c < n; ++c) a0 += static_cast<double>(w[c]) * in[c];
    const double acc = (a0 + a1) + (a2 + a3);
    out[r] = bias.empty() ? acc : acc + static_cast<double>(bias[r]);
  }
}

std::vector<double> LinearLayer::apply(std::span<const double> in) const {
  std::vector<double> out(out_dim());
  apply(in, out);
  return out;
}

LinearLayer make_linear(std::size_t in_dim, std::size_t out_dim, bool with_bias, ParamRng& rng) {
  require(in_dim > 0 && out_dim > 0, "make_linear: dimensions must be positive");
  LinearLayer l;
  l.weight = MatrixF(out_dim, in_dim);
  rng.fill_normal(l.weight.values(), 1.0 / std::sqrt(static_cast<double>(in_dim)));
  if (with_bias) l.bias.assign(out_dim, 0.0f);
  return l;
}

void rms_normalize(std::span<const double> x, std::span<double> out) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + kRmsEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
}

void RmsNorm::apply(std::span<const double> x, std::span<double> out) const {
  require(x.size() == scale.size(), "RmsNorm: width mismatch");
  rms_normalize(x, out);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] *= static_cast<double>(scale[i]);
}

void rope_apply(std::span<double> head, std::int64_t position, double base) {
  require(head.size() % 2 == 0, "rope_apply: head dimension must be even");
  const double dim = static_cast<double>(head.size());
  for (std::size_t j = 0; j < head.size() / 2; ++j) {
    const double freq = std::pow(base, -2.0 * static_cast<double>(j) / dim);
    const double angle = static_cast<double>(position) * freq;
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = head[2 * j], b = head[2 * j + 1];
    head[2 * j] = a * c - b * s;
    head[2 * j + 1] = a * s + b * c;
  }
}

void rope_apply_heads(std::span<double> frame, std::size_t n_heads, std::int64_t position, double base) {
  require(n_heads > 0 && frame.size() % n_heads == 0, "rope_apply_heads: width not divisible by heads");
  const std::size_t hd = frame.size() / n_heads;
  for (std::size_t h = 0; h < n_heads; ++h) rope_apply(frame.subspan(h * hd, hd), position, base);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

void AttentionConfig::validate() const {
  require(n_heads > 0, "AttentionConfig: n_heads must be positive");
  require(head_dim > 0, "AttentionConfig: head_dim must be positive");
  require(!rotary || head_dim % 2 == 0, "AttentionConfig: rotary attention needs an even head_dim");
  require(window_frames > 0, "AttentionConfig: window_frames must be positive");
  require(rope_base > 0.0, "AttentionConfig: rope_base must be positive");
}

TransformerBlock make_block(const AttentionConfig& cfg, ParamRng& rng) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.model_dim());
  TransformerBlock b;
  b.cfg = cfg;
  b.norm1.scale.assign(d, 1.0f);
  b.wq = make_linear(d, d, true, rng);
  b.wk = make_linear(d, d, true, rng);
  b.wv = make_linear(d, d, true, rng);
  b.wo = make_linear(d, d, true, rng);
  b.norm2.scale.assign(d, 1.0f);
  b.ffn_up = make_linear(d, 4 * d, true, rng);
  b.ffn_down = make_linear(4 * d, d, true, rng);
  return b;
}

std::size_t block_parameter_count(const AttentionConfig& cfg) {
  const auto d = static_cast<std::size_t>(cfg.model_dim());
  return 2 * d + 4 * (d * d + d) + (4 * d * d + 4 * d) + (4 * d * d + d);
}

std::size_t TransformerBlock::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](auto t) { n += t.size(); });
  return n;
}

namespace {

// Projections of one position; everything that does not look at other positions.
struct Projected {
  std::vector<double> q, k, v;
};

Projected project(const TransformerBlock& b, std::span<const double> x, std::int64_t position) {
  const std::size_t d = b.model_dim();
  std::vector<double> normed(d);
  b.norm1.apply(x, normed);
  Projected p{b.wq.apply(normed), b.wk.apply(normed), b.wv.apply(normed)};
  if (b.cfg.rotary) {
    const auto heads = static_cast<std::size_t>(b.cfg.n_heads);
    rope_apply_heads(p.q, heads, position, b.cfg.rope_base);
    rope_apply_heads(p.k, heads, position, b.cfg.rope_base);
  }
  return p;
}

// Softmax attention of one query over `count` cached positions, oldest first.
template <typename KeyAt, typename ValueAt>
std::vector<double> attend(const AttentionConfig& cfg, std::span<const double> q, std::size_t count,
                           KeyAt key_at, ValueAt value_at) {
  const auto hd = static_cast<std::size_t>(cfg.head_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> out(q.size(), 0.0);
  std::vector<double> scores(count);
  for (std::size_t h = 0; h < static_cast<std::size_t>(cfg.n_heads); ++h) {
    const std::size_t off = h * hd;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < count; ++j) {
      const std::vector<double>& k = key_at(j);
      double dot = 0.0;
      for (std::size_t i = 0; i < hd; ++i) dot += q[off + i] * k[off + i];
      scores[j] = dot * scale;
      max_score = std::max(max_score, scores[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      scores[j] = std::exp(scores[j] - max_score);
      denom += scores[j];
    }
    for (std::size_t j = 0; j < count; ++j) {
      const std::vector<double>& v = value_at(j);
      const double p = scores[j] / denom;
      for (std::size_t i = 0; i < hd; ++i) out[off + i] += p * v[off + i];
    }
  }
  return out;
}

// Output projection, residual and feed-forward for one position.
std::vector<float> finish(const TransformerBlock& b, std::span<const double> x, const std::vector<double>& attn) {
  const std::size_t d = b.model_dim();
  std::vector<double> h = b.wo.apply(attn);
  for (std::size_t i = 0; i < d; ++i) h[i] += x[i];
  std::vector<double> normed(d);
  b.norm2.apply(h, normed);
  std::vector<double> up = b.ffn_up.apply(normed);
  for (double& u : up) u = gelu(u);
  std::vector<double> down = b.ffn_down.apply(up);
  std::vector<float> y(d);
  for (std::size_t i = 0; i < d; ++i) y[i] = static_cast<float>(h[i] + down[i]);
  return y;
}

std::vector<double> widen(std::span<const float> x) { return {x.begin(), x.end()}; }

}  // namespace

MatrixF block_forward(const TransformerBlock& block, const MatrixF& frames) {
  const std::size_t d = block.model_dim();
  require(frames.empty() || frames.cols() == d,
          "block_forward: frame width " + std::to_string(frames.cols()) + " != model dim " + std::to_string(d));
  const std::size_t T = frames.rows();
  std::vector<std::vector<double>> xs(T);
  std::vector<Projected> proj(T);
  for (std::size_t t = 0; t < T; ++t) {
    xs[t] = widen(frames.row(t));
    proj[t] = project(block, xs[t], static_cast<std::int64_t>(t));
  }
  const auto window = static_cast<std::size_t>(block.cfg.window_frames);
  MatrixF out(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t lo = t + 1 > window ? t + 1 - window : 0;
    auto attn = attend(
        block.cfg, proj[t].q, t - lo + 1, [&](std::size_t j) -> const std::vector<double>& { return proj[lo + j].k; },
        [&](std::size_t j) -> const std::vector<double>& { return proj[lo + j].v; });
    auto y = finish(block, xs[t], attn);
    std::copy(y.begin(), y.end(), out.row(t).begin());
  }
  return out;
}

std::vector<float> block_step(const TransformerBlock& block, BlockState& state, std::span<const float> frame) {
  require(state.cfg == block.cfg, "block_step: state was created for a different attention config");
  require(frame.size() == block.model_dim(), "block_step: frame width " + std::to_string(frame.size()) +
                                                 " != model dim " + std::to_string(block.model_dim()));
  const auto x = widen(frame);
  Projected p = project(block, x, state.position);
  state.keys.push_back(std::move(p.k));
  state.values.push_back(std::move(p.v));
  const auto window = static_cast<std::size_t>(block.cfg.window_frames);
  while (state.keys.size() > window) {
    state.keys.pop_front();
    state.values.pop_front();
  }
  ++state.position;
  auto attn = attend(
      block.cfg, p.q, state.keys.size(), [&](std::size_t j) -> const std::vector<double>& { return state.keys[j]; },
      [&](std::size_t j) -> const std::vector<double>& { return state.values[j]; });
  return finish(block, x, attn);
}

MatrixF TransformerStack::forward(const MatrixF& frames) const {
  MatrixF x = frames;
  for (const auto& b : blocks) x = block_forward(b, x);
  return x;
}

std::size_t TransformerStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.parameter_count();
  return n;
}

StackState::StackState(const TransformerStack& stack) {
  blocks.reserve(stack.blocks.size());
  for (const auto& b : stack.blocks) blocks.emplace_back(b.cfg);
}

std::vector<float> stack_step(const TransformerStack& stack, StackState& state, std::span<const float> frame) {
  require(state.blocks.size() == stack.blocks.size(), "stack_step: state depth does not match stack");
  std::vector<float> x(frame.begin(), frame.end());
  for (std::size_t i = 0; i < stack.blocks.size(); ++i) x = block_step(stack.blocks[i], state.blocks[i], x);
  return x;
}

TransformerStack make_stack(const AttentionConfig& cfg, int n_blocks, ParamRng& rng) {
  require(n_blocks >= 0, "make_stack: negative block count");
  TransformerStack s;
  for (int i = 0; i < n_blocks; ++i) s.blocks.push_back(make_block(cfg, rng));
  return s;
}

}  // namespace cat::nnf
