#include <cmath>
#include <random>
#include <vector>

#include "cat/checks/oracles.hpp"
#include "cat/error.hpp"
#include "cat/nnf.hpp"
#include "doctest.h"

using namespace cat;
using namespace cat::nnf;

namespace {

// Random biases and norm scales so every parameter participates.
TransformerBlock random_block(const AttentionConfig& cfg, std::uint64_t seed) {
  ParamRng rng(seed);
  TransformerBlock b = make_block(cfg, rng);
  b.for_each_tensor([&](std::span<float> t) {
    if (t.size() == b.model_dim() || t.size() == 4 * b.model_dim()) {
      for (float& v : t) v += static_cast<float>(rng.normal(0.2));
    }
  });
  return b;
}

MatrixF random_frames(std::size_t T, std::size_t d, std::uint64_t seed) {
  ParamRng rng(seed);
  MatrixF m(T, d);
  rng.fill_normal(m.values(), 1.0);
  return m;
}

AttentionConfig cfg_of(int heads, int head_dim, int window) {
  AttentionConfig c;
  c.n_heads = heads;
  c.head_dim = head_dim;
  c.window_frames = window;
  return c;
}

}  // namespace

TEST_CASE("initialization is deterministic per seed") {
  const auto cfg = cfg_of(2, 4, 8);
  ParamRng a(5), b(5), c(6);
  const auto x = make_block(cfg, a);
  const auto y = make_block(cfg, b);
  const auto z = make_block(cfg, c);
  CHECK(x.wq.weight == y.wq.weight);
  CHECK(x.ffn_down.weight == y.ffn_down.weight);
  CHECK_FALSE(x.wq.weight == z.wq.weight);
  ParamRng r(1);
  const auto tiny = make_linear(1, 1, true, r);
  CHECK(std::isfinite(tiny.weight(0, 0)));
  CHECK(x.parameter_count() == block_parameter_count(cfg));
}

TEST_CASE("linear layer accumulates like a plain dot product") {
  ParamRng rng(3);
  const auto l = make_linear(13, 5, true, rng);
  std::vector<double> in(13);
  for (double& v : in) v = rng.normal(1.0);
  const auto out = l.apply(in);
  for (std::size_t r = 0; r < 5; ++r) {
    double acc = l.bias[r];
    for (std::size_t c = 0; c < 13; ++c) acc += static_cast<double>(l.weight(r, c)) * in[c];
    CHECK(out[r] == doctest::Approx(acc).epsilon(1e-13));
  }
  std::vector<double> wrong(12);
  CHECK_THROWS_AS(l.apply(wrong), ContractError);
}

TEST_CASE("rotary embedding identities") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> q(16), k(16);
  for (double& v : q) v = d(rng);
  for (double& v : k) v = d(rng);

  auto q0 = q;
  rope_apply(q0, 0, 10000.0);
  CHECK(q0 == q);

  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  auto qr = q;
  rope_apply(qr, 37, 10000.0);
  CHECK(std::abs(norm(qr) - norm(q)) <= 1e-12 * norm(q));

  auto dot_at = [&](std::int64_t m, std::int64_t n) {
    auto a = q, b = k;
    rope_apply(a, m, 10000.0);
    rope_apply(b, n, 10000.0);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  for (std::int64_t shift : {1, 5, 100}) {
    CHECK(std::abs(dot_at(3 + shift, 1 + shift) - dot_at(3, 1)) <= 1e-9);
    CHECK(std::abs(dot_at(10 + shift, 10 + shift) - dot_at(10, 10)) <= 1e-9);
  }
  std::vector<double> odd(3);
  CHECK_THROWS_AS(rope_apply(odd, 1, 10000.0), ContractError);
}

TEST_CASE("rms normalization yields unit RMS") {
  std::vector<double> x = {3.0, -4.0, 12.0, 0.5, 7.0};
  std::vector<double> out(x.size());
  rms_normalize(x, out);
  double ms = 0.0;
  for (double v : out) ms += v * v;
  CHECK(std::abs(std::sqrt(ms / out.size()) - 1.0) <= 1e-6);
}

TEST_CASE("block forward matches the dense masked-attention oracle") {
  for (int window : {kUnboundedWindow, 3, 1}) {
    const auto b = random_block(cfg_of(2, 4, window), 11);
    const MatrixF x = random_frames(8, 8, 12);
    const MatrixF fast = block_forward(b, x);
    const MatrixD slow = checks::dense_block_forward(b, matrix_cast<double>(x));
    CHECK(checks::max_rel_diff(matrix_cast<double>(fast).values(), slow.values()) <= 1e-5);
  }
}

TEST_CASE("block forward is causal") {
  const auto b = random_block(cfg_of(2, 4, kUnboundedWindow), 13);
  MatrixF x = random_frames(10, 8, 14);
  const MatrixF y0 = block_forward(b, x);
  x(7, 3) += 1.0f;
  const MatrixF y1 = block_forward(b, x);
  for (std::size_t t = 0; t < 7; ++t) CHECK(checks::bitwise_equal(y0.row(t), y1.row(t)));
  CHECK_FALSE(checks::bitwise_equal(y0.row(7), y1.row(7)));
}

TEST_CASE("window of one ignores every other frame") {
  const auto b = random_block(cfg_of(2, 4, 1), 15);
  MatrixF x = random_frames(6, 8, 16);
  const MatrixF y0 = block_forward(b, x);
  x(2, 0) -= 2.0f;
  const MatrixF y1 = block_forward(b, x);
  for (std::size_t t = 0; t < 6; ++t) {
    if (t != 2) CHECK(checks::bitwise_equal(y0.row(t), y1.row(t)));
  }
}

TEST_CASE("single frame forward equals one step from an empty cache") {
  const auto b = random_block(cfg_of(1, 6, 4), 17);
  const MatrixF x = random_frames(1, 6, 18);
  BlockState st(b.cfg);
  const auto step = block_step(b, st, x.row(0));
  CHECK(checks::bitwise_equal<float>(step, block_forward(b, x).row(0)));
}

TEST_CASE("streaming steps reproduce the batch pass") {
  for (int window : {kUnboundedWindow, 5}) {
    const auto cfg = cfg_of(2, 4, window);
    ParamRng rng(19);
    TransformerStack stack = make_stack(cfg, 3, rng);
    const MatrixF x = random_frames(64, 8, 20);
    const MatrixF batch = stack.forward(x);
    StackState st(stack);
    for (std::size_t t = 0; t < 64; ++t) {
      const auto y = stack_step(stack, st, x.row(t));
      CHECK(checks::max_rel_diff(std::span<const float>(y), batch.row(t), 1e-30) <= 1e-5);
    }
  }
}

TEST_CASE("cache evicts frames that leave the window") {
  const auto b = random_block(cfg_of(2, 4, 4), 21);
  MatrixF x = random_frames(12, 8, 22);
  MatrixF x2 = x;
  x2(0, 1) += 3.0f;
  BlockState s1(b.cfg), s2(b.cfg);
  for (std::size_t t = 0; t < 12; ++t) {
    const auto y1 = block_step(b, s1, x.row(t));
    const auto y2 = block_step(b, s2, x2.row(t));
    CHECK(s1.keys.size() == std::min<std::size_t>(t + 1, 4));
    if (t >= 4) CHECK(checks::bitwise_equal<float>(y1, y2));
  }
}

TEST_CASE("mismatched state or width is a contract error") {
  const auto b = random_block(cfg_of(2, 4, 4), 23);
  BlockState wrong(cfg_of(2, 4, 5));
  std::vector<float> frame(8, 0.0f);
  CHECK_THROWS_AS(block_step(b, wrong, frame), ContractError);
  BlockState ok(b.cfg);
  std::vector<float> narrow(7, 0.0f);
  CHECK_THROWS_AS(block_step(b, ok, narrow), ContractError);
  CHECK_THROWS_AS(block_forward(b, MatrixF(3, 7)), ContractError);
  CHECK_THROWS_AS(cfg_of(1, 3, 4).validate(), ContractError);
  CHECK_THROWS_AS(cfg_of(1, 4, 0).validate(), ContractError);
}
