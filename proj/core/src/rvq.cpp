#include "cat/rvq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cat/error.hpp"
#include "json.hpp"

namespace cat::rvq {

using nlohmann::json;

RvqConfig RvqConfig::reference(int d_model) { return {32, 1024, 8, d_model}; }

void RvqConfig::validate() const {
  require(n_layers >= 1, "RvqConfig: n_layers must be positive");
  require(codebook_size >= 2, "RvqConfig: codebook_size must be at least 2");
  require(code_dim >= 1, "RvqConfig: code_dim must be positive");
  require(d_model >= 1, "RvqConfig: d_model must be positive");
}

std::string RvqConfig::to_json() const {
  return json{{"n_layers", n_layers}, {"codebook_size", codebook_size}, {"code_dim", code_dim}, {"d_model", d_model}}
      .dump();
}

RvqConfig RvqConfig::from_json(const std::string& text) {
  RvqConfig c;
  try {
    json j = json::parse(text);
    c.n_layers = j.at("n_layers").get<int>();
    c.codebook_size = j.at("codebook_size").get<int>();
    c.code_dim = j.at("code_dim").get<int>();
    c.d_model = j.at("d_model").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("rvq config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void normalize_row(std::span<double> v) {
  const double n = std::sqrt(dot(v, v));
  const double inv = 1.0 / std::max(n, kNormEps);
  for (double& x : v) x *= inv;
}

// n x k matrix (k <= n) with orthonormal columns, by modified Gram-Schmidt.
MatrixD orthonormal_columns(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixD q(n, k);
  for (double& v : q.values()) v = dist(rng);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = q(i, j);
    for (std::size_t p = 0; p < j; ++p) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += col[i] * q(i, p);
      for (std::size_t i = 0; i < n; ++i) col[i] -= proj * q(i, p);
    }
    normalize_row(col);
    for (std::size_t i = 0; i < n; ++i) q(i, j) = col[i];
  }
  return q;
}

MatrixD transpose(const MatrixD& m) {
  MatrixD t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

void check_stack(const RvqStack& stack) { require(!stack.layers.empty(), "rvq: empty stack"); }

void check_depth(const RvqStack& stack, int depth) {
  require(depth >= 1 && depth <= stack.n_layers(),
          "rvq: depth " + std::to_string(depth) + " outside [1, " + std::to_string(stack.n_layers()) + "]");
}

std::vector<double> project_in(const FactorizedCodebook& cb, std::span<const double> z) {
  std::vector<double> u(cb.code_dim());
  for (std::size_t r = 0; r < u.size(); ++r) u[r] = dot(cb.w_in.row(r), z);
  return u;
}

void map_out(const FactorizedCodebook& cb, std::size_t index, std::span<double> out) {
  auto e = cb.entries.row(index);
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = dot(cb.w_out.row(r), e);
}

}  // namespace

RvqStack RvqStack::init(const RvqConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto c = static_cast<std::size_t>(cfg.code_dim);
  RvqStack s;
  for (int l = 0; l < cfg.n_layers; ++l) {
    FactorizedCodebook cb;
    if (c <= d) {
      cb.w_out = orthonormal_columns(d, c, rng);
      cb.w_in = transpose(cb.w_out);
    } else {
      cb.w_in = orthonormal_columns(c, d, rng);
      cb.w_out = transpose(cb.w_in);
    }
    cb.entries = MatrixD(static_cast<std::size_t>(cfg.codebook_size), c);
    for (double& v : cb.entries.values()) v = dist(rng);
    for (std::size_t r = 0; r < cb.entries.rows(); ++r) normalize_row(cb.entries.row(r));
    s.layers.push_back(std::move(cb));
  }
  return s;
}

RvqConfig RvqStack::config() const {
  check_stack(*this);
  const auto& l = layers.front();
  return {n_layers(), static_cast<int>(l.size()), static_cast<int>(l.code_dim()), static_cast<int>(l.d_model())};
}

void RvqStack::snap_to_float() {
  for_each_tensor([](std::span<double> t) {
    for (double& v : t) v = static_cast<double>(static_cast<float>(v));
  });
}

LayerSelection quantize_layer(const FactorizedCodebook& cb, std::span<const double> z) {
  require(z.size() == cb.d_model(), "quantize_layer: input width " + std::to_string(z.size()) + " != " +
                                        std::to_string(cb.d_model()));
  auto u = project_in(cb, z);
  normalize_row(u);
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cb.size(); ++i) {
    auto e = cb.entries.row(i);
    double dist = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double diff = u[j] - e[j];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  LayerSelection sel;
  sel.index = static_cast<int>(best);
  sel.q.resize(cb.d_model());
  map_out(cb, best, sel.q);
  sel.latent_residual_norm = std::sqrt(best_dist);
  return sel;
}

RvqEncoding rvq_encode(const RvqStack& stack, const MatrixD& z, int depth) {
  check_stack(stack);
  check_depth(stack, depth);
  require(z.empty() || z.cols() == stack.d_model(), "rvq_encode: latent width " + std::to_string(z.cols()) +
                                                         " != " + std::to_string(stack.d_model()));
  const std::size_t T = z.rows();
  const std::size_t d = stack.d_model();
  RvqEncoding enc;
  enc.tokens = TokenMatrix(T, static_cast<std::size_t>(depth));
  enc.quantized = MatrixD(T, d, 0.0);
  MatrixD residual = z.empty() ? MatrixD(0, d) : z;
  for (int c = 0; c < depth; ++c) {
    MatrixD q(T, d);
    for (std::size_t t = 0; t < T; ++t) {
      auto sel = quantize_layer(stack.layers[static_cast<std::size_t>(c)], residual.row(t));
      enc.tokens.at(t, static_cast<std::size_t>(c)) = sel.index;
      std::copy(sel.q.begin(), sel.q.end(), q.row(t).begin());
    }
    enc.inputs.push_back(residual);
    MatrixD next = residual;
    for (std::size_t i = 0; i < q.size(); ++i) {
      next.values()[i] -= q.values()[i];
      enc.quantized.values()[i] += q.values()[i];
    }
    enc.outputs.push_back(std::move(q));
    residual = std::move(next);
  }
  return enc;
}

MatrixD layer_contribution(const RvqStack& stack, const TokenMatrix& tokens, int layer) {
  check_stack(stack);
  require(layer >= 0 && static_cast<std::size_t>(layer) < tokens.depth(), "layer_contribution: layer out of range");
  const auto& cb = stack.layers[static_cast<std::size_t>(layer)];
  MatrixD out(tokens.frames(), stack.d_model());
  for (std::size_t t = 0; t < tokens.frames(); ++t) {
    const std::int32_t code = tokens.at(t, static_cast<std::size_t>(layer));
    require(code >= 0 && static_cast<std::size_t>(code) < cb.size(),
            "rvq_decode: code " + std::to_string(code) + " out of range at frame " + std::to_string(t) + ", layer " +
                std::to_string(layer));
    map_out(cb, static_cast<std::size_t>(code), out.row(t));
  }
  return out;
}

MatrixD rvq_decode(const RvqStack& stack, const TokenMatrix& tokens) {
  check_stack(stack);
  require(tokens.depth() >= 1 && tokens.depth() <= static_cast<std::size_t>(stack.n_layers()),
          "rvq_decode: token depth " + std::to_string(tokens.depth()) + " outside [1, " +
              std::to_string(stack.n_layers()) + "]");
  MatrixD out(tokens.frames(), stack.d_model(), 0.0);
  for (std::size_t k = 0; k < tokens.depth(); ++k) {
    const MatrixD c = layer_contribution(stack, tokens, static_cast<int>(k));
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += c.values()[i];
  }
  return out;
}

int dropout_sample(const DropoutPolicy& policy, int n_q, std::mt19937_64& rng) {
  require(n_q >= 1, "dropout_sample: n_q must be positive");
  require(policy.probability >= 0.0 && policy.probability <= 1.0, "dropout_sample: probability outside [0, 1]");
  std::bernoulli_distribution gate(policy.probability);
  if (!gate(rng)) return n_q;
  std::uniform_int_distribution<int> depth(1, n_q);
  return depth(rng);
}

namespace {

double squared_distance_sum(std::span<const MatrixD> a, std::span<const MatrixD> b, const char* who) {
  require(a.size() == b.size(), std::string(who) + ": layer count mismatch");
  double total = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    require(a[c].rows() == b[c].rows() && a[c].cols() == b[c].cols(),
            std::string(who) + ": shape mismatch at layer " + std::to_string(c));
    auto av = a[c].values();
    auto bv = b[c].values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double diff = av[i] - bv[i];
      total += diff * diff;
    }
  }
  return total;
}

}  // namespace

double commitment_loss(std::span<const MatrixD> z_inputs, std::span<const MatrixD> q_outputs) {
  return squared_distance_sum(z_inputs, q_outputs, "commitment_loss");
}

double codebook_loss(std::span<const MatrixD> z_inputs, std::span<const MatrixD> q_outputs) {
  return squared_distance_sum(z_inputs, q_outputs, "codebook_loss");
}

GradSet GradSet::zeros_like(const RvqStack& stack, std::size_t frames) {
  GradSet g;
  for (const auto& l : stack.layers) {
    g.entries.emplace_back(l.entries.rows(), l.entries.cols(), 0.0);
    g.w_in.emplace_back(l.w_in.rows(), l.w_in.cols(), 0.0);
    g.w_out.emplace_back(l.w_out.rows(), l.w_out.cols(), 0.0);
  }
  g.z = MatrixD(frames, stack.d_model(), 0.0);
  return g;
}

GradSet QuantizerGrads::combined(double commitment_weight, double codebook_weight) const {
  GradSet out = from_codebook;
  auto blend = [&](std::span<double> dst, std::span<const double> cmt, std::span<const double> code) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = commitment_weight * cmt[i] + codebook_weight * code[i];
  };
  for (std::size_t l = 0; l < out.entries.size(); ++l) {
    blend(out.entries[l].values(), from_commitment.entries[l].values(), from_codebook.entries[l].values());
    blend(out.w_in[l].values(), from_commitment.w_in[l].values(), from_codebook.w_in[l].values());
    blend(out.w_out[l].values(), from_commitment.w_out[l].values(), from_codebook.w_out[l].values());
  }
  blend(out.z.values(), from_commitment.z.values(), from_codebook.z.values());
  return out;
}

QuantizerGrads quantizer_grads(const RvqStack& stack, const MatrixD& z, int depth) {
  const RvqEncoding enc = rvq_encode(stack, z, depth);
  const std::size_t T = z.rows();
  const std::size_t d = stack.d_model();

  QuantizerGrads g;
  g.commitment = commitment_loss(enc.inputs, enc.outputs);
  g.codebook = codebook_loss(enc.inputs, enc.outputs);
  g.from_commitment = GradSet::zeros_like(stack, T);
  g.from_codebook = GradSet::zeros_like(stack, T);

  // Commitment: z_c = z - sum_{j<c} sg(q_j), so dz_c/dz = I for every layer.
  for (int c = 0; c < depth; ++c) {
    const auto& zc = enc.inputs[static_cast<std::size_t>(c)];
    const auto& qc = enc.outputs[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < zc.size(); ++i) g.from_commitment.z.values()[i] += 2.0 * (zc.values()[i] - qc.values()[i]);
  }

  // Codebook: q_c = w_out_c * e_c[idx], target sg(z_c).
  std::vector<double> r(d);
  for (int c = 0; c < depth; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const auto& cb = stack.layers[cu];
    auto& d_entries = g.from_codebook.entries[cu];
    auto& d_w_out = g.from_codebook.w_out[cu];
    for (std::size_t t = 0; t < T; ++t) {
      const auto idx = static_cast<std::size_t>(enc.tokens.at(t, cu));
      auto e = cb.entries.row(idx);
      for (std::size_t i = 0; i < d; ++i) r[i] = 2.0 * (enc.outputs[cu](t, i) - enc.inputs[cu](t, i));
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < e.size(); ++j) d_w_out(i, j) += r[i] * e[j];
      }
      auto de = d_entries.row(idx);
      for (std::size_t j = 0; j < e.size(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += cb.w_out(i, j) * r[i];
        de[j] += acc;
      }
    }
  }
  return g;
}

double mean_quantization_error(const RvqStack& stack, const MatrixD& z, int depth) {
  if (z.rows() == 0) return 0.0;
  const RvqEncoding enc = rvq_encode(stack, z, depth);
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double diff = z.values()[i] - enc.quantized.values()[i];
    total += diff * diff;
  }
  return total / static_cast<double>(z.rows());
}

TrainResult train_codebooks(RvqStack stack, std::span<const MatrixD> batches, const TrainOptions& opts) {
  check_stack(stack);
  require(opts.lr >= 0.0 && std::isfinite(opts.lr), "train_codebooks: lr must be finite and non-negative");
  require(opts.steps >= 0, "train_codebooks: steps must be non-negative");
  require(opts.lambda_cmt >= 0.0, "train_codebooks: lambda_cmt must be non-negative");
  require(!batches.empty(), "train_codebooks: no feature batches");
  for (const auto& b : batches) {
    require(b.rows() > 0 && b.cols() == stack.d_model(), "train_codebooks: batch shape does not match the stack");
  }

  std::mt19937_64 rng(opts.seed);
  TrainResult result;
  for (int step = 0; step < opts.steps; ++step) {
    const MatrixD& batch = batches[static_cast<std::size_t>(step) % batches.size()];
    const int depth = dropout_sample(opts.dropout, stack.n_layers(), rng);
    const QuantizerGrads grads = quantizer_grads(stack, batch, depth);
    const double frames = static_cast<double>(batch.rows());
    const double objective = (grads.codebook + opts.lambda_cmt * grads.commitment) / frames;
    if (!std::isfinite(objective)) {
      std::ostringstream msg;
      msg << "train_codebooks: non-finite objective at step " << step << " (depth " << depth
          << ", L_code=" << grads.codebook << ", L_cmt=" << grads.commitment << ")";
      throw InvariantError(msg.str());
    }
    result.loss_trace.push_back(objective);
    result.depths.push_back(depth);

    const GradSet g = grads.combined(opts.lambda_cmt, 1.0);
    const double scale = opts.lr / frames;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
      auto& cb = stack.layers[l];
      auto step_into = [scale](std::span<double> p, std::span<const double> dp) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= scale * dp[i];
      };
      step_into(cb.w_in.values(), g.w_in[l].values());
      step_into(cb.w_out.values(), g.w_out[l].values());
      for (std::size_t r = 0; r < cb.entries.rows(); ++r) {
        auto row = cb.entries.row(r);
        auto grow = g.entries[l].row(r);
        bool moved = false;
        for (std::size_t j = 0; j < row.size(); ++j) {
          const double before = row[j];
          row[j] -= scale * grow[j];
          moved = moved || row[j] != before;
        }
        if (moved) normalize_row(row);
      }
    }
  }
  result.stack = std::move(stack);
  return result;
}

void seed_entries_from_features(RvqStack& stack, const MatrixD& features, std::mt19937_64& rng) {
  check_stack(stack);
  require(features.rows() > 0 && features.cols() == stack.d_model(),
          "seed_entries_from_features: feature shape does not match the stack");
  MatrixD residual = features;
  for (auto& cb : stack.layers) {
    const std::size_t T = residual.rows();
    MatrixD u(T, cb.code_dim());
    for (std::size_t t = 0; t < T; ++t) {
      auto p = project_in(cb, residual.row(t));
      normalize_row(p);
      std::copy(p.begin(), p.end(), u.row(t).begin());
    }
    std::vector<double> nearest(T, std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<std::size_t> pick(0, T - 1);
    std::size_t chosen = pick(rng);
    for (std::size_t e = 0; e < cb.size(); ++e) {
      auto src = u.row(chosen);
      std::copy(src.begin(), src.end(), cb.entries.row(e).begin());
      double best = -1.0;
      std::size_t best_t = 0;
      for (std::size_t t = 0; t < T; ++t) {
        double dist = 0.0;
        for (std::size_t j = 0; j < src.size(); ++j) {
          const double diff = u(t, j) - src[j];
          dist += diff * diff;
        }
        nearest[t] = std::min(nearest[t], dist);
        if (nearest[t] > best) {
          best = nearest[t];
          best_t = t;
        }
      }
      if (best <= 0.0) break;  // every feature already has an identical entry
      chosen = best_t;
    }
    for (std::size_t r = 0; r < cb.entries.rows(); ++r) normalize_row(cb.entries.row(r));

    MatrixD next(T, residual.cols());
    for (std::size_t t = 0; t < T; ++t) {
      auto sel = quantize_layer(cb, residual.row(t));
      for (std::size_t i = 0; i < residual.cols(); ++i) next(t, i) = residual(t, i) - sel.q[i];
    }
    residual = std::move(next);
  }
}

UsageStats usage_stats(const TokenMatrix& tokens, int codebook_size) {
  require(codebook_size >= 1, "usage_stats: codebook size must be positive");
  const auto size = static_cast<std::size_t>(codebook_size);
  UsageStats s;
  for (std::size_t k = 0; k < tokens.depth(); ++k) {
    std::vector<std::size_t> hist(size, 0);
    for (std::size_t t = 0; t < tokens.frames(); ++t) {
      const std::int32_t code = tokens.at(t, k);
      require(code >= 0 && static_cast<std::size_t>(code) < size, "usage_stats: code out of range");
      ++hist[static_cast<std::size_t>(code)];
    }
    std::size_t distinct = 0;
    double entropy = 0.0;
    const double n = static_cast<double>(tokens.frames());
    for (std::size_t c : hist) {
      if (c == 0) continue;
      ++distinct;
      const double p = static_cast<double>(c) / n;
      entropy -= p * std::log(p);
    }
    s.utilization.push_back(static_cast<double>(distinct) / static_cast<double>(size));
    s.perplexity.push_back(tokens.frames() == 0 ? 0.0 : std::exp(entropy));
    s.histograms.push_back(std::move(hist));
  }
  return s;
}

}  // namespace cat::rvq
