#include "cat/checks/criteria.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "cat/bitstream.hpp"
#include "cat/checks/oracles.hpp"
#include "cat/codec.hpp"
#include "cat/error.hpp"
#include "cat/lm.hpp"
#include "cat/losses.hpp"
#include "cat/model_file.hpp"
#include "cat/pipeline.hpp"
#include "cat/rvq.hpp"

namespace cat::checks {

void Tally::check(bool ok, const std::string& what) {
  ++total_;
  if (ok) {
    ++passed_;
  } else if (first_failure_.empty()) {
    first_failure_ = what;
  }
}

namespace {

using Rng = std::mt19937_64;

std::string str(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

Waveform random_waveform(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Waveform w;
  w.sample_rate = kCodecSampleRate;
  w.samples.resize(n);
  for (double& s : w.samples) s = u(rng);
  return w;
}

TokenMatrix random_tokens(std::size_t frames, std::size_t depth, int limit, Rng& rng) {
  std::uniform_int_distribution<int> u(0, limit - 1);
  TokenMatrix t(frames, depth);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < depth; ++k) t.at(f, k) = u(rng);
  }
  return t;
}

MatrixD random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  MatrixD m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

const CatModel& desk_model() {
  static const CatModel model = make_desk_model(7);
  return model;
}

const lm::ArModel& desk_ar() {
  static const lm::ArModel model = pipeline::make_desk_ar_model(desk_model(), 7);
  return model;
}

// ---------------------------------------------------------------------------

void bitrate_table(Tally& t) {
  const int depths[] = {6, 8, 12, 16, 24, 32};
  const double expected[] = {750, 1000, 1500, 2000, 3000, 4000};
  for (int i = 0; i < 6; ++i) {
    const double got = bitstream::bitrate(depths[i], 1024, 12.5);
    t.check(got == expected[i], "bitrate(" + std::to_string(depths[i]) + ") = " + str(got));
  }
  // Measured rate of a packed two-second stream.
  const TokenMatrix tokens(25, 8, 1023);
  const auto bytes = bitstream::pack(tokens, {24000, 1920, 10, 25 * 1920});
  const auto header = bitstream::read_header(bytes);
  const double measured = static_cast<double>(header.payload_bits()) / 2.0;
  t.check(measured == 1000.0, "measured payload rate " + str(measured));
}

void frame_rate(Tally& t) {
  const CatModel& m = desk_model();
  t.check(m.codec.cfg.frame_rate() == 12.5, "frame rate " + str(m.codec.cfg.frame_rate()));
  Rng rng(2);
  for (std::size_t T = 1; T <= 64; ++T) {
    const auto z = codec::encode(m.codec, random_waveform(1920 * T, rng));
    t.check(z.frames.rows() == T && z.frames.cols() == 96,
            "T=" + std::to_string(T) + " gave " + std::to_string(z.frames.rows()) + " frames");
  }
}

void streaming(Tally& t) {
  const CatModel& m = desk_model();
  double worst_enc = 0.0, worst_dec = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    const Waveform w = random_waveform(1920 * T, rng);
    const auto batch = codec::encode(m.codec, w);

    codec::EncoderState es(m.codec);
    MatrixF stream(0, 96);
    for (std::size_t f = 0; f < T; ++f) {
      stream.append_row(codec::encode_step(m.codec, es, std::span(w.samples).subspan(f * 1920, 1920)));
    }
    const double enc = max_rel_diff(stream.values(), batch.frames.values());
    worst_enc = std::max(worst_enc, enc);
    t.check(enc <= 1e-5, "encoder seed " + std::to_string(seed) + " rel " + str(enc));

    const auto tb = rvq::rvq_encode(m.rvq, matrix_cast<double>(batch.frames), 8).tokens;
    const auto ts = rvq::rvq_encode(m.rvq, matrix_cast<double>(stream), 8).tokens;
    t.check(tb == ts, "tokens differ for seed " + std::to_string(seed));

    const codec::LatentSequence zq{matrix_cast<float>(rvq::rvq_decode(m.rvq, tb)), 12.5};
    const Waveform wb = codec::decode(m.codec, zq);
    codec::DecoderState ds(m.codec);
    std::vector<double> ws;
    for (std::size_t f = 0; f < T; ++f) {
      const auto chunk = codec::decode_step(m.codec, ds, zq.frames.row(f));
      ws.insert(ws.end(), chunk.begin(), chunk.end());
    }
    const double dec = max_rel_diff(ws, wb.samples);
    worst_dec = std::max(worst_dec, dec);
    t.check(dec <= 1e-5, "decoder seed " + std::to_string(seed) + " rel " + str(dec));
  }
  t.note("max rel diff encoder " + str(worst_enc) + ", decoder " + str(worst_dec));
}

// Replaces every token of the layout at temporal position > cut.
void perturb_after(lm::SequenceLayout& l, std::size_t cut, int codebook, Rng& rng) {
  std::uniform_int_distribution<int> byte(0, 255), code(0, codebook - 1);
  std::size_t pos = 1;
  for (int& x : l.prompt_text) {
    if (pos++ > cut) x = (x + 1 + byte(rng) % 255) % 256;
  }
  ++pos;
  for (int& x : l.target_text) {
    if (pos++ > cut) x = (x + 1 + byte(rng) % 255) % 256;
  }
  ++pos;
  for (TokenMatrix* audio : {&l.prompt_audio, &l.target_audio}) {
    for (std::size_t f = 0; f < audio->frames(); ++f, ++pos) {
      if (pos <= cut) continue;
      for (auto& c : audio->row(f)) c = (c + 1 + code(rng) % (codebook - 1)) % codebook;
    }
  }
}

lm::SequenceLayout random_layout(const lm::ArConfig& cfg, Rng& rng, std::size_t max_prompt_frames,
                                 std::size_t max_target_frames) {
  std::uniform_int_distribution<int> byte(0, 255);
  lm::SequenceLayout l;
  const auto pt = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
  const auto tt = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
  for (std::size_t i = 0; i < pt; ++i) l.prompt_text.push_back(byte(rng));
  for (std::size_t i = 0; i < tt; ++i) l.target_text.push_back(byte(rng));
  const auto pa = std::uniform_int_distribution<std::size_t>(0, max_prompt_frames)(rng);
  const auto ta = std::uniform_int_distribution<std::size_t>(1, max_target_frames)(rng);
  const auto depth = static_cast<std::size_t>(cfg.n_q);
  if (pa > 0) l.prompt_audio = random_tokens(pa, depth, cfg.codebook_size, rng);
  l.target_audio = random_tokens(ta, depth, cfg.codebook_size, rng);
  return l;
}

void causality(Tally& t) {
  const CatModel& m = desk_model();
  const lm::ArModel& ar = desk_ar();
  std::normal_distribution<double> noise(0.0, 0.3);
  for (std::uint64_t c = 0; c < 50; ++c) {
    Rng rng(5000 + c);
    const std::string tag = "case " + std::to_string(c);

    // Encoder latents and tokens.
    const std::size_t T = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
    const Waveform w = random_waveform(1920 * T, rng);
    const auto z = codec::encode(m.codec, w);
    const auto tokens = rvq::rvq_encode(m.rvq, matrix_cast<double>(z.frames), 8).tokens;
    for (std::size_t cut = 0; cut + 1 < T; ++cut) {
      Waveform w2 = w;
      for (std::size_t i = (cut + 1) * 1920; i < w2.samples.size(); ++i) w2.samples[i] += noise(rng);
      const auto z2 = codec::encode(m.codec, w2);
      const auto tokens2 = rvq::rvq_encode(m.rvq, matrix_cast<double>(z2.frames), 8).tokens;
      bool same_z = true, same_tok = true, moved = false;
      for (std::size_t f = 0; f < T; ++f) {
        const bool eq = bitwise_equal(z.frames.row(f), z2.frames.row(f));
        if (f <= cut) {
          same_z = same_z && eq;
          same_tok = same_tok && bitwise_equal(tokens.row(f), tokens2.row(f));
        } else {
          moved = moved || !eq;
        }
      }
      t.check(same_z, tag + ": encoder latent at or before cut " + std::to_string(cut) + " changed");
      t.check(same_tok, tag + ": token at or before cut " + std::to_string(cut) + " changed");
      t.check(moved, tag + ": perturbation after cut " + std::to_string(cut) + " had no effect");
    }

    // Decoder samples.
    const codec::LatentSequence lat{matrix_cast<float>(random_matrix(T, 96, 1.0, rng)), 12.5};
    const Waveform y = codec::decode(m.codec, lat);
    for (std::size_t cut = 0; cut + 1 < T; ++cut) {
      codec::LatentSequence lat2 = lat;
      for (std::size_t f = cut + 1; f < T; ++f) {
        for (float& v : lat2.frames.row(f)) v += static_cast<float>(noise(rng));
      }
      const Waveform y2 = codec::decode(m.codec, lat2);
      const std::size_t keep = (cut + 1) * 1920;
      t.check(bitwise_equal<double>(std::span(y.samples).first(keep), std::span(y2.samples).first(keep)),
              tag + ": decoder sample at or before cut " + std::to_string(cut) + " changed");
    }

    // Temporal hidden states.
    lm::SequenceLayout layout = random_layout(ar.cfg, rng, 3, 4);
    const int k_hat = std::uniform_int_distribution<int>(1, ar.cfg.n_q)(rng);
    const MatrixF h = lm::temporal_forward(ar, layout, k_hat);
    for (std::size_t cut = 0; cut + 1 < layout.length(); ++cut) {
      lm::SequenceLayout l2 = layout;
      perturb_after(l2, cut, ar.cfg.codebook_size, rng);
      const MatrixF h2 = lm::temporal_forward(ar, l2, k_hat);
      bool same = true;
      for (std::size_t p = 0; p <= cut; ++p) same = same && bitwise_equal(h.row(p), h2.row(p));
      t.check(same, tag + ": temporal state at or before cut " + std::to_string(cut) + " changed");
    }

    // Depth logits: future frames and layers >= k of the same frame.
    const std::size_t first = layout.audio_start() + layout.prompt_audio.frames();
    const auto n_q = static_cast<std::size_t>(ar.cfg.n_q);
    const MatrixF h1 = lm::temporal_forward(ar, layout, ar.cfg.n_q);
    for (std::size_t f = 0; f < layout.target_audio.frames(); ++f) {
      lm::SequenceLayout l2 = layout;
      perturb_after(l2, first + f - 1, ar.cfg.codebook_size, rng);
      const MatrixF h2 = lm::temporal_forward(ar, l2, ar.cfg.n_q);
      const auto frame = layout.target_audio.row(f);
      const auto frame2 = l2.target_audio.row(f);
      for (std::size_t k = 1; k <= n_q; ++k) {
        const auto ref = lm::depth_forward(ar, h1.row(first + f - 1), frame.first(k - 1));
        // Same prefix, future frames perturbed.
        const auto alt = lm::depth_forward(ar, h2.row(first + f - 1), frame.first(k - 1));
        // Full-length depth sequence whose layers >= k are perturbed.
        std::vector<std::int32_t> mixed(frame.begin(), frame.end());
        for (std::size_t j = k - 1; j < n_q; ++j) mixed[j] = frame2[j];
        const MatrixF y = lm::depth_hidden(ar, h2.row(first + f - 1), std::span(mixed).first(n_q - 1));
        const auto row = y.row(k - 1);
        const auto full = ar.heads[k - 1].apply(std::vector<double>(row.begin(), row.end()));
        t.check(bitwise_equal<double>(ref, alt) && bitwise_equal<double>(ref, full),
                tag + ": depth logits for frame " + std::to_string(f) + " layer " + std::to_string(k) + " changed");
      }
    }
  }
}

void prefix_consistency(Tally& t) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(7000 + s);
    rvq::RvqConfig cfg;
    cfg.n_layers = std::uniform_int_distribution<int>(1, 8)(rng);
    cfg.codebook_size = std::uniform_int_distribution<int>(2, 64)(rng);
    cfg.code_dim = 8;
    cfg.d_model = 16;
    const auto stack = rvq::RvqStack::init(cfg, s);
    const auto T = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    const auto nq = static_cast<std::size_t>(cfg.n_layers);
    const TokenMatrix tokens = random_tokens(T, nq, cfg.codebook_size, rng);
    const MatrixD full = rvq::rvq_decode(stack, tokens);
    for (std::size_t K = 1; K <= nq; ++K) {
      MatrixD acc = rvq::rvq_decode(stack, tokens.truncated(K));
      for (std::size_t k = K; k < nq; ++k) {
        const MatrixD c = rvq::layer_contribution(stack, tokens, static_cast<int>(k));
        for (std::size_t i = 0; i < acc.size(); ++i) acc.values()[i] += c.values()[i];
      }
      t.check(acc == full, "stack " + std::to_string(s) + ": depth " + std::to_string(K) +
                               " plus remaining layers differs from full decode");
    }
    // Encoder side: quantized output equals the decode of its own tokens.
    const MatrixD z = random_matrix(T, 16, 1.0, rng);
    const auto enc = rvq::rvq_encode(stack, z, cfg.n_layers);
    t.check(rvq::rvq_decode(stack, enc.tokens) == enc.quantized,
            "stack " + std::to_string(s) + ": decode(encode(z)) != quantized");
  }
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(8000 + s);
    const auto depth = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    const auto bits = std::uniform_int_distribution<int>(1, 12)(rng);
    const auto frames = std::uniform_int_distribution<std::size_t>(0, 20)(rng);
    const TokenMatrix tokens = random_tokens(frames, depth, 1 << bits, rng);
    const auto bytes = bitstream::pack(tokens, {24000, 1920, static_cast<std::uint8_t>(bits), frames * 1920});
    for (std::size_t K = 1; K <= depth; ++K) {
      const auto cut = bitstream::truncate_to_depth(bytes, static_cast<int>(K));
      const auto u = bitstream::unpack(cut);
      t.check(u.tokens == tokens.truncated(K) && u.header.n_layers == K,
              "stream " + std::to_string(s) + ": truncate to " + std::to_string(K) + " != column drop");
    }
    t.check(bitstream::truncate_to_depth(bytes, static_cast<int>(depth)) == bytes,
            "stream " + std::to_string(s) + ": truncate to own depth is not byte-identical");
  }
}

// Squared distance sum of frozen residuals to the outputs chosen under parameters `stack`.
double codebook_objective(const rvq::RvqStack& stack, const std::vector<MatrixD>& frozen,
                          const std::vector<std::vector<int>>& expected, bool& flipped) {
  double total = 0.0;
  for (std::size_t c = 0; c < frozen.size(); ++c) {
    const auto& cb = stack.layers[c];
    for (std::size_t t = 0; t < frozen[c].rows(); ++t) {
      const int idx = brute_force_nearest(cb, frozen[c].row(t));
      flipped = flipped || idx != expected[c][t];
      for (std::size_t i = 0; i < cb.d_model(); ++i) {
        double q = 0.0;
        for (std::size_t j = 0; j < cb.code_dim(); ++j) q += cb.w_out(i, j) * cb.entries(static_cast<std::size_t>(idx), j);
        total += (frozen[c](t, i) - q) * (frozen[c](t, i) - q);
      }
    }
  }
  return total;
}

// Commitment loss with the residual chain recomputed for input z.
double commitment_objective(const rvq::RvqStack& stack, const MatrixD& z, int depth,
                            const std::vector<std::vector<int>>& expected, bool& flipped) {
  double total = 0.0;
  for (std::size_t t = 0; t < z.rows(); ++t) {
    std::vector<double> r(z.row(t).begin(), z.row(t).end());
    for (int c = 0; c < depth; ++c) {
      const auto& cb = stack.layers[static_cast<std::size_t>(c)];
      const int idx = brute_force_nearest(cb, r);
      flipped = flipped || idx != expected[static_cast<std::size_t>(c)][t];
      for (std::size_t i = 0; i < r.size(); ++i) {
        double q = 0.0;
        for (std::size_t j = 0; j < cb.code_dim(); ++j) q += cb.w_out(i, j) * cb.entries(static_cast<std::size_t>(idx), j);
        total += (r[i] - q) * (r[i] - q);
        r[i] -= q;
      }
    }
  }
  return total;
}

bool all_zero(const std::vector<MatrixD>& ms) {
  for (const auto& m : ms) {
    for (double v : m.values()) {
      if (v != 0.0) return false;
    }
  }
  return true;
}

void gradients(Tally& t) {
  constexpr double h = 1e-5;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  double worst = 0.0;
  std::size_t skipped = 0, compared = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(9000 + s);
    rvq::RvqConfig cfg{2, 4, 2, 4};
    rvq::RvqStack stack = rvq::RvqStack::init(cfg, 100 + s);
    // Perturb the tied projections so w_in and w_out are generic.
    for (auto& cb : stack.layers) {
      for (double& v : cb.w_in.values()) v += std::normal_distribution<double>(0.0, 0.3)(rng);
      for (double& v : cb.w_out.values()) v += std::normal_distribution<double>(0.0, 0.3)(rng);
    }
    const MatrixD z = random_matrix(3, 4, 1.0, rng);
    const auto enc = rvq::rvq_encode(stack, z, 2);
    const auto g = rvq::quantizer_grads(stack, z, 2);
    const std::string tag = "stack " + std::to_string(s);

    t.check(all_zero(g.from_commitment.entries) && all_zero(g.from_commitment.w_in) &&
                all_zero(g.from_commitment.w_out),
            tag + ": commitment gradient reached codebook parameters");
    t.check(all_zero({g.from_codebook.z}), tag + ": codebook gradient reached z");

    std::vector<std::vector<int>> idx(2, std::vector<int>(3));
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t f = 0; f < 3; ++f) idx[c][f] = enc.tokens.at(f, c);
    }
    const auto combined = g.combined();

    // z through the commitment loss.
    for (std::size_t i = 0; i < z.size(); ++i) {
      MatrixD zp = z, zm = z;
      zp.values()[i] += h;
      zm.values()[i] -= h;
      bool flipped = false;
      const double fd = (commitment_objective(stack, zp, 2, idx, flipped) -
                         commitment_objective(stack, zm, 2, idx, flipped)) / (2 * h);
      if (flipped) {
        ++skipped;
        continue;
      }
      ++compared;
      const double e = rel(combined.z.values()[i], fd);
      worst = std::max(worst, e);
      t.check(e <= 1e-4, tag + ": dz[" + std::to_string(i) + "] rel " + str(e));
    }

    // Codebook parameters through the codebook loss, residuals frozen.
    auto check_param = [&](auto select, const std::vector<MatrixD>& grad, const char* name) {
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < grad[c].size(); ++i) {
          rvq::RvqStack sp = stack, sm = stack;
          select(sp.layers[c]).values()[i] += h;
          select(sm.layers[c]).values()[i] -= h;
          bool flipped = false;
          const double fd = (codebook_objective(sp, enc.inputs, idx, flipped) -
                             codebook_objective(sm, enc.inputs, idx, flipped)) / (2 * h);
          if (flipped) {
            ++skipped;
            continue;
          }
          ++compared;
          const double e = rel(grad[c].values()[i], fd);
          worst = std::max(worst, e);
          t.check(e <= 1e-4, tag + ": d" + name + "[" + std::to_string(c) + "][" + std::to_string(i) + "] rel " + str(e));
        }
      }
    };
    check_param([](rvq::FactorizedCodebook& cb) -> MatrixD& { return cb.entries; }, combined.entries, "entries");
    check_param([](rvq::FactorizedCodebook& cb) -> MatrixD& { return cb.w_out; }, combined.w_out, "w_out");
    check_param([](rvq::FactorizedCodebook& cb) -> MatrixD& { return cb.w_in; }, combined.w_in, "w_in");
  }
  t.note("compared " + std::to_string(compared) + " coordinates, skipped " + std::to_string(skipped) +
         " at selection boundaries, worst rel " + str(worst));
}

struct ClusterData {
  MatrixD x;
};

ClusterData cluster_features(std::uint64_t seed) {
  constexpr std::size_t d = 16, per = 64;
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const MatrixD centers = random_matrix(4, d, scale, rng);
  ClusterData out{MatrixD(0, d)};
  std::normal_distribution<double> spread(0.0, 0.1 * scale);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      std::vector<double> row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = centers(c, j) + spread(rng);
      out.x.append_row(row);
    }
  }
  return out;
}

rvq::TrainResult train_on_clusters(const MatrixD& x, std::uint64_t seed) {
  rvq::RvqStack stack = rvq::RvqStack::init({1, 4, 8, 16}, seed);
  Rng rng(seed);
  rvq::seed_entries_from_features(stack, x, rng);
  rvq::TrainOptions opts;
  opts.steps = 500;
  opts.lr = 0.5;
  opts.seed = seed;
  const std::vector<MatrixD> batches{x};
  return rvq::train_codebooks(std::move(stack), batches, opts);
}

void codebook_training(Tally& t) {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto data = cluster_features(11000 + s);
    const auto result = train_on_clusters(data.x, s);
    const double err = rvq::mean_quantization_error(result.stack, data.x, 1);
    const double oracle = kmeans(data.x, 4, 10, 12000 + s).mean_sq_error;
    const double ratio = err / oracle;
    worst = std::max(worst, ratio);
    t.check(ratio <= 1.5, "seed " + std::to_string(s) + ": error ratio " + str(ratio));
    t.check(result.loss_trace.size() == 500, "seed " + std::to_string(s) + ": trace length");
    bool unit = true;
    for (std::size_t r = 0; r < 4; ++r) {
      double n = 0.0;
      for (double v : result.stack.layers[0].entries.row(r)) n += v * v;
      unit = unit && std::abs(std::sqrt(n) - 1.0) <= 1e-6;
    }
    t.check(unit, "seed " + std::to_string(s) + ": entries left the unit sphere");
    const auto again = train_on_clusters(data.x, s);
    t.check(again.loss_trace == result.loss_trace && again.stack.layers[0].entries == result.stack.layers[0].entries,
            "seed " + std::to_string(s) + ": rerun differs");
  }
  t.note("worst error / k-means ratio " + str(worst));
}

void psd_law(Tally& t) {
  constexpr int draws = 100000;
  {
    Rng rng(1);
    bool all = true;
    for (int i = 0; i < draws; ++i) all = all && lm::psd_sample({0.0, 32}, rng) == 32;
    t.check(all, "p=0 returned something other than n_q");
  }
  {
    Rng rng(2);
    std::vector<int> hist(33, 0);
    for (int i = 0; i < draws; ++i) ++hist[static_cast<std::size_t>(lm::psd_sample({1.0, 32}, rng))];
    const double expected = draws / 31.0;
    t.check(hist[0] == 0 && hist[32] == 0, "p=1 produced K_hat outside {1..31}");
    double worst = 0.0;
    for (int k = 1; k <= 31; ++k) {
      const double dev = std::abs(hist[static_cast<std::size_t>(k)] - expected) / expected;
      worst = std::max(worst, dev);
      t.check(dev <= 0.15, "bin " + std::to_string(k) + " deviates by " + str(dev));
    }
    t.note("worst bin deviation " + str(worst));
  }
  for (double p : {0.25, 0.5, 1.0}) {
    Rng rng(static_cast<std::uint64_t>(p * 1000));
    double sum = 0.0;
    for (int i = 0; i < draws; ++i) sum += lm::psd_sample({p, 32}, rng);
    const double mean = sum / draws;
    const double expected = (1.0 - p) * 32 + p * 16;
    t.check(std::abs(mean - expected) / expected <= 0.02, "p=" + str(p) + ": mean " + str(mean));
  }
}

void loss_masking(Tally& t) {
  const lm::ArModel& ar = desk_ar();
  for (std::uint64_t c = 0; c < 100; ++c) {
    Rng rng(13000 + c);
    lm::SequenceLayout l = random_layout(ar.cfg, rng, 2, 3);
    const int k_hat = std::uniform_int_distribution<int>(1, ar.cfg.n_q - 1)(rng);
    const double base = lm::ar_loss(ar, l, k_hat);
    std::uniform_int_distribution<int> code(0, ar.cfg.codebook_size - 1);
    for (TokenMatrix* audio : {&l.prompt_audio, &l.target_audio}) {
      for (std::size_t f = 0; f < audio->frames(); ++f) {
        for (std::size_t k = static_cast<std::size_t>(k_hat); k < audio->depth(); ++k) audio->at(f, k) = code(rng);
      }
    }
    const double again = lm::ar_loss(ar, l, k_hat);
    t.check(again == base, "case " + std::to_string(c) + ": loss changed under masked perturbation");
  }
  lm::ArModel uniform = desk_ar();
  for (auto& head : uniform.heads) {
    for (float& v : head.weight.values()) v = 0.0f;
    for (float& v : head.bias) v = 0.0f;
  }
  const double ln = std::log(1024.0);
  for (int k_hat = 1; k_hat <= uniform.cfg.n_q; ++k_hat) {
    Rng rng(14000 + static_cast<std::uint64_t>(k_hat));
    const auto l = random_layout(uniform.cfg, rng, 2, 3);
    const double loss = lm::ar_loss(uniform, l, k_hat);
    t.check(std::abs(loss - ln) <= 1e-9, "uniform logits, K_hat=" + std::to_string(k_hat) + ": " + str(loss));
  }
}

void aggregate_loss(Tally& t) {
  using losses::LossTerms;
  const auto unit = losses::total_loss({1, 1, 1, 1, 1, 1});
  t.check(unit.total == 39.25, "unit terms gave " + str(unit.total));
  const auto zero = losses::total_loss({});
  t.check(zero.total == 0.0, "zero terms gave " + str(zero.total));
  const losses::LossWeights w;
  const double lambdas[] = {w.sem, w.rec, w.cmt, w.code, w.adv, w.feat};
  for (int i = 0; i < 6; ++i) {
    LossTerms terms{1, 1, 1, 1, 1, 1};
    double* fields[] = {&terms.sem, &terms.rec, &terms.cmt, &terms.code, &terms.adv, &terms.feat};
    *fields[i] = 2.0;
    const double delta = losses::total_loss(terms).total - unit.total;
    t.check(delta == lambdas[i], "doubling term " + std::to_string(i) + " changed total by " + str(delta));
  }
}

void bitstream_roundtrip(Tally& t) {
  {
    TokenMatrix one(1, 1);
    one.at(0, 0) = 0b1010101010;
    const auto b = bitstream::pack(one, {24000, 1920, 10, 1920});
    t.check(b.size() == bitstream::kHeaderBytes + 2 && b[25] == 0xAA && b[26] == 0x80, "1x1 10-bit body != AA 80");
  }
  {
    TokenMatrix m(2, 2);
    m.at(0, 0) = 1;
    m.at(0, 1) = 2;
    m.at(1, 0) = 3;
    m.at(1, 1) = 4;
    const auto b = bitstream::pack(m, {24000, 1920, 3, 3840});
    t.check(b.size() == bitstream::kHeaderBytes + 2 && b[25] == 0x29 && b[26] == 0xC0, "2x2 3-bit body != 29 C0");
  }
  {
    const auto b = bitstream::pack(TokenMatrix(0, 4), {24000, 1920, 10, 0});
    const std::vector<std::uint8_t> header{'C', 'A', 'T', '1', 1, 0xC0, 0x5D, 0, 0, 0x80, 0x07, 4, 10,
                                           0,   0,   0,   0,   0, 0,    0,    0, 0, 0,    0,    0};
    t.check(b == header, "empty stream header bytes differ");
  }
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng rng(15000 + s);
    const auto depth = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    const auto bits = std::uniform_int_distribution<int>(1, 12)(rng);
    const auto frames = std::uniform_int_distribution<std::size_t>(0, 40)(rng);
    const TokenMatrix tokens = random_tokens(frames, depth, 1 << bits, rng);
    const std::uint64_t len = frames == 0 ? 0 : frames * 1920 - std::uniform_int_distribution<std::uint64_t>(0, 1919)(rng);
    const auto bytes = bitstream::pack(tokens, {24000, 1920, static_cast<std::uint8_t>(bits), len});
    const auto u = bitstream::unpack(bytes);
    const std::size_t payload = frames * depth * static_cast<std::size_t>(bits);
    t.check(u.tokens == tokens && u.header.original_len_samples == len && u.header.bits_per_code == bits &&
                bytes.size() == bitstream::kHeaderBytes + (payload + 7) / 8,
            "round trip " + std::to_string(s) + " (depth " + std::to_string(depth) + ", bits " +
                std::to_string(bits) + ")");
  }
}

void pipeline_closure(Tally& t) {
  const CatModel& m = desk_model();
  const lm::ArModel& ar = desk_ar();
  // Prompt audio: a short synthetic tone through the codec.
  Waveform tone;
  for (int i = 0; i < 12000; ++i) tone.samples.push_back(0.3 * std::sin(2.0 * 3.141592653589793 * 220.0 * i / 24000.0));
  const auto prompt = pipeline::encode_waveform(m, tone, 8);
  t.check(prompt.tokens.frames() == 7, "prompt frame count " + std::to_string(prompt.tokens.frames()));

  for (int depth : {1, 4, 8}) {
    pipeline::TtsOptions opts;
    opts.depth = depth;
    opts.max_frames = 12;
    opts.seed = 3;
    const auto r = pipeline::tts_simulate(m, ar, "a prompt", "hello world", prompt.bytes, opts);
    const std::string tag = "depth " + std::to_string(depth);
    const std::size_t frames = r.tokens.frames();
    t.check(frames >= 1 && r.tokens.depth() == static_cast<std::size_t>(depth), tag + ": generated shape");
    const auto u = bitstream::unpack(r.stream);
    t.check(u.tokens == r.tokens, tag + ": packed tokens differ");
    t.check(bitstream::truncate_to_depth(r.stream, depth) == r.stream, tag + ": transcode to own depth changed bytes");
    const auto shallow = bitstream::truncate_to_depth(r.stream, 1);
    t.check(pipeline::decode_bitstream(m, shallow).samples.size() == frames * 1920, tag + ": depth-1 decode length");
    t.check(r.waveform.samples.size() == frames * 1920, tag + ": waveform length " +
                                                             std::to_string(r.waveform.samples.size()));
    t.check(r.reencoded.frames() == frames && r.reencoded.depth() == static_cast<std::size_t>(depth),
            tag + ": re-encoded shape");
    const auto again = pipeline::tts_simulate(m, ar, "a prompt", "hello world", prompt.bytes, opts);
    t.check(again.stream == r.stream, tag + ": generation is not deterministic");
  }
}

}  // namespace

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "bitrate table", 0.001, bitrate_table},
      {2, "frame-rate arithmetic", 5.0, frame_rate},
      {3, "streaming equivalence", 30.0, streaming},
      {4, "causality", 60.0, causality},
      {5, "rvq prefix consistency", 10.0, prefix_consistency},
      {6, "quantizer gradients", 30.0, gradients},
      {7, "codebook training", 60.0, codebook_training},
      {8, "progressive sequence dropout law", 10.0, psd_law},
      {9, "ar loss masking", 30.0, loss_masking},
      {10, "aggregate loss", 0.001, aggregate_loss},
      {11, "bitstream round trip", 10.0, bitstream_roundtrip},
      {12, "pipeline closure", 120.0, pipeline_closure},
  };
  return all;
}

CriterionResult run_criterion(const Criterion& c) {
  CriterionResult r;
  r.id = c.id;
  r.name = c.name;
  r.budget_seconds = c.budget_seconds;
  Tally tally;
  std::string error;
  const auto start = std::chrono::steady_clock::now();
  try {
    c.run(tally);
  } catch (const std::exception& e) {
    error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.checks_passed = tally.passed();
  r.checks_total = tally.total();
  const bool in_budget = r.seconds <= r.budget_seconds;
  r.passed = error.empty() && tally.total() > 0 && tally.passed() == tally.total() && in_budget;
  if (!error.empty()) {
    r.detail = "exception: " + error;
  } else if (!tally.first_failure().empty()) {
    r.detail = "first failure: " + tally.first_failure();
  } else if (!in_budget) {
    r.detail = "over time budget";
  }
  if (!tally.notes().empty()) r.detail += (r.detail.empty() ? "" : "; ") + tally.notes();
  return r;
}

std::string format_result(const CriterionResult& r) {
  char head[160];
  std::snprintf(head, sizeof head, "[%s] %2d %-34s %zu/%zu checks  %.4fs (budget %gs)", r.passed ? "PASS" : "FAIL",
                r.id, r.name.c_str(), r.checks_passed, r.checks_total, r.seconds, r.budget_seconds);
  std::string out = head;
  if (!r.detail.empty()) out += "  " + r.detail;
  return out;
}

}  // namespace cat::checks
