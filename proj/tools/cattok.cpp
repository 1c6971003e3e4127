// cattok: encode, decode, inspect and exercise CAT token streams.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cat/bitstream.hpp"
#include "cat/checks/criteria.hpp"
#include "cat/error.hpp"
#include "cat/losses.hpp"
#include "cat/model_file.hpp"
#include "cat/pipeline.hpp"
#include "cat/rvq.hpp"
#include "cat/spectral.hpp"
#include "cat/wav.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUser = 2;
constexpr int kExitInternal = 3;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("CAT_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw cat::ContractError(std::string("CAT_SEED is not an unsigned integer: ") + env);
    }
  }
  return 7;
}

struct Common {
  bool json_out = false;
  std::optional<std::uint64_t> seed;

  std::uint64_t resolved_seed() const { return seed ? *seed : default_seed(); }
};

// Prints either the JSON object or "key: value" lines.
void emit(const Common& c, const json& j) {
  if (c.json_out) {
    std::cout << j.dump() << "\n";
    return;
  }
  for (const auto& [k, v] : j.items()) {
    std::cout << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  }
}

cat::CatModel load_or_default(const std::string& path, const Common& c) {
  if (path.empty()) return cat::make_desk_model(c.resolved_seed());
  return cat::read_model_file(path);
}

json header_json(const cat::bitstream::BitstreamHeader& h) {
  return {{"version", h.version},
          {"sample_rate", h.sample_rate},
          {"samples_per_frame", h.samples_per_frame},
          {"n_layers", h.n_layers},
          {"bits_per_code", h.bits_per_code},
          {"n_frames", h.n_frames},
          {"original_len_samples", h.original_len_samples},
          {"payload_bits", h.payload_bits()},
          {"bitrate_bps", static_cast<double>(h.n_layers) * h.bits_per_code * h.frame_rate()}};
}

cat::MatrixD read_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cat::FormatError("cannot open features file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw cat::FormatError("features file: " + std::string(e.what()));
  }
  if (!j.is_array() || j.empty()) throw cat::FormatError("features file must hold a nonempty array of rows");
  cat::MatrixD m;
  for (const auto& row : j) {
    std::vector<double> r;
    try {
      r = row.get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw cat::FormatError("features row: " + std::string(e.what()));
    }
    if (!m.empty() && r.size() != m.cols()) throw cat::FormatError("features rows have different widths");
    m.append_row(r);
  }
  return m;
}

// Four tight clusters in 16 dimensions.
cat::MatrixD synthetic_features(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  constexpr std::size_t d = 16;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::normal_distribution<double> center(0.0, scale), spread(0.0, 0.1 * scale);
  cat::MatrixD centers(4, d);
  for (double& v : centers.values()) v = center(rng);
  cat::MatrixD x(0, d);
  for (std::size_t c = 0; c < 4; ++c) {
    for (int i = 0; i < 64; ++i) {
      std::vector<double> row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = centers(c, j) + spread(rng);
      x.append_row(row);
    }
  }
  return x;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cattok - causal audio tokenizer runtime"};
  app.require_subcommand(1);
  Common common;
  int exit_code = kExitOk;

  auto add_common = [&](CLI::App* sub) {
    sub->add_flag("--json", common.json_out, "Print a single JSON object");
    sub->add_option("--seed", common.seed, "Seed for default models and sampling (default: CAT_SEED or 7)");
  };

  // init
  std::string init_out;
  auto* init = app.add_subcommand("init", "Write a seeded desk-scale model file");
  init->add_option("--out", init_out, "Output CATW file")->required();
  add_common(init);
  init->callback([&] {
    const auto m = cat::make_desk_model(common.resolved_seed());
    cat::write_model_file(init_out, m);
    emit(common, {{"out", init_out},
                  {"codec_parameters", m.codec.parameter_count()},
                  {"rvq_layers", m.rvq.n_layers()},
                  {"codebook_size", m.rvq.config().codebook_size}});
  });

  // encode
  std::string model_path, in_path, out_path;
  std::optional<int> depth;
  auto* encode = app.add_subcommand("encode", "WAV to CAT1 stream");
  encode->add_option("--model", model_path, "CATW model (default: seeded desk model)");
  encode->add_option("--in", in_path, "Input WAV (24 kHz)")->required();
  encode->add_option("--out", out_path, "Output CAT1 file")->required();
  encode->add_option("--depth", depth, "Number of RVQ layers (default: all)");
  add_common(encode);
  encode->callback([&] {
    const auto m = load_or_default(model_path, common);
    const auto w = cat::read_wav_file(in_path);
    const int k = depth.value_or(m.rvq.n_layers());
    const auto e = cat::pipeline::encode_waveform(m, w, k);
    cat::write_file_bytes(out_path, e.bytes);
    emit(common, {{"frames", e.tokens.frames()},
                  {"depth", k},
                  {"bitrate_bps", e.bitrate},
                  {"bytes", e.bytes.size()},
                  {"samples", w.samples.size()}});
  });

  // decode
  auto* decode = app.add_subcommand("decode", "CAT1 stream to WAV");
  decode->add_option("--model", model_path, "CATW model (default: seeded desk model)");
  decode->add_option("--in", in_path, "Input CAT1 file")->required();
  decode->add_option("--out", out_path, "Output WAV")->required();
  add_common(decode);
  decode->callback([&] {
    const auto m = load_or_default(model_path, common);
    const auto u = cat::bitstream::unpack(cat::read_file_bytes(in_path));
    const auto w = cat::pipeline::decode_tokens(m, u);
    cat::write_wav_file(out_path, w);
    emit(common, {{"frames", u.header.n_frames}, {"depth", u.header.n_layers}, {"samples", w.samples.size()}});
  });

  // transcode
  int transcode_depth = 1;
  auto* transcode = app.add_subcommand("transcode", "Keep the first K layers of a CAT1 stream");
  transcode->add_option("--in", in_path, "Input CAT1 file")->required();
  transcode->add_option("--out", out_path, "Output CAT1 file")->required();
  transcode->add_option("--depth", transcode_depth, "Layers to keep")->required();
  add_common(transcode);
  transcode->callback([&] {
    const auto out = cat::bitstream::truncate_to_depth(cat::read_file_bytes(in_path), transcode_depth);
    cat::write_file_bytes(out_path, out);
    emit(common, header_json(cat::bitstream::read_header(out)));
  });

  // info
  auto* info = app.add_subcommand("info", "Describe a CAT1 stream");
  info->add_option("--in", in_path, "Input CAT1 file")->required();
  add_common(info);
  info->callback([&] {
    const auto u = cat::bitstream::unpack(cat::read_file_bytes(in_path));
    json j = header_json(u.header);
    j["duration_seconds"] = static_cast<double>(u.header.n_frames) / u.header.frame_rate();
    const auto stats = cat::rvq::usage_stats(u.tokens, 1 << u.header.bits_per_code);
    j["perplexity"] = stats.perplexity;
    emit(common, j);
  });

  // bitrate
  int layers = 8, codebook = 1024;
  double rate = 12.5;
  auto* bitrate = app.add_subcommand("bitrate", "layers * ceil(log2(codebook)) * frame rate");
  bitrate->add_option("layers,--layers", layers, "RVQ layers");
  bitrate->add_option("codebook,--codebook", codebook, "Codebook size");
  bitrate->add_option("rate,--rate", rate, "Frame rate in Hz");
  add_common(bitrate);
  bitrate->callback([&] {
    const double bps = cat::bitstream::bitrate(layers, codebook, rate);
    if (common.json_out) {
      emit(common, {{"layers", layers}, {"codebook", codebook}, {"rate", rate}, {"bps", bps}});
    } else {
      std::cout << bps << "\n";
    }
  });

  // loss
  std::string a_path, b_path;
  cat::losses::LossTerms extra;
  auto* loss = app.add_subcommand("loss", "Multi-scale mel loss between two WAVs and the weighted total");
  loss->add_option("--a", a_path, "Reference WAV")->required();
  loss->add_option("--b", b_path, "Reconstructed WAV")->required();
  loss->add_option("--sem", extra.sem, "Semantic loss term");
  loss->add_option("--cmt", extra.cmt, "Commitment loss term");
  loss->add_option("--code", extra.code, "Codebook loss term");
  loss->add_option("--adv", extra.adv, "Adversarial loss term");
  loss->add_option("--feat", extra.feat, "Feature-matching loss term");
  add_common(loss);
  loss->callback([&] {
    const auto a = cat::read_wav_file(a_path);
    const auto b = cat::read_wav_file(b_path);
    const double mel = cat::multi_scale_mel_loss(a, b, cat::MelLossConfig::standard(a.sample_rate));
    cat::losses::LossTerms terms = extra;
    terms.rec = mel;
    const auto report = cat::losses::total_loss(terms);
    emit(common, {{"mel_loss", mel}, {"report", json::parse(report.to_json())}, {"total", report.total}});
  });

  // train-codebook
  std::string features_path;
  int steps = 500, train_layers = 1, train_codebook = 4, code_dim = 8;
  double lr = 0.5;
  bool no_seeding = false;
  auto* train = app.add_subcommand("train-codebook", "Gradient-descent codebook training on feature vectors");
  train->add_option("--features", features_path, "JSON array of feature rows (default: synthetic clusters)");
  train->add_option("--steps", steps, "Gradient steps");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--layers", train_layers, "RVQ layers");
  train->add_option("--codebook", train_codebook, "Entries per layer");
  train->add_option("--code-dim", code_dim, "Factorized code dimension");
  train->add_flag("--no-data-init", no_seeding, "Keep random entries instead of seeding them from the features");
  add_common(train);
  train->callback([&] {
    const std::uint64_t seed = common.resolved_seed();
    const auto x = features_path.empty() ? synthetic_features(seed) : read_features(features_path);
    cat::rvq::RvqConfig cfg{train_layers, train_codebook, code_dim, static_cast<int>(x.cols())};
    auto stack = cat::rvq::RvqStack::init(cfg, seed);
    std::mt19937_64 rng(seed);
    if (!no_seeding) cat::rvq::seed_entries_from_features(stack, x, rng);
    cat::rvq::TrainOptions opts;
    opts.steps = steps;
    opts.lr = lr;
    opts.seed = seed;
    const double before = cat::rvq::mean_quantization_error(stack, x, train_layers);
    const std::vector<cat::MatrixD> batches{x};
    const auto result = cat::rvq::train_codebooks(std::move(stack), batches, opts);
    const double after = cat::rvq::mean_quantization_error(result.stack, x, train_layers);
    const auto tokens = cat::rvq::rvq_encode(result.stack, x, train_layers).tokens;
    const auto stats = cat::rvq::usage_stats(tokens, train_codebook);
    emit(common, {{"frames", x.rows()},
                  {"steps", steps},
                  {"initial_error", before},
                  {"final_error", after},
                  {"first_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.front()},
                  {"last_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.back()},
                  {"utilization", stats.utilization},
                  {"perplexity", stats.perplexity}});
  });

  // ttssim
  std::string text = "hello world", prompt_text, prompt_path, wav_out;
  int tts_depth = 8, max_frames = 16;
  double temperature = 0.0;
  auto* tts = app.add_subcommand("ttssim", "Generate tokens from text with a seeded AR model and decode them");
  tts->add_option("--model", model_path, "CATW model (default: seeded desk model)");
  tts->add_option("--text", text, "Target text");
  tts->add_option("--prompt-text", prompt_text, "Transcript of the audio prompt");
  tts->add_option("--prompt", prompt_path, "CAT1 audio prompt");
  tts->add_option("--depth", tts_depth, "Inference depth K");
  tts->add_option("--max-frames", max_frames, "Frame limit");
  tts->add_option("--temperature", temperature, "Sampling temperature (0 = greedy)");
  tts->add_option("--out", out_path, "Write the generated CAT1 stream");
  tts->add_option("--wav", wav_out, "Write the decoded waveform");
  add_common(tts);
  tts->callback([&] {
    const std::uint64_t seed = common.resolved_seed();
    const auto m = load_or_default(model_path, common);
    const auto ar = cat::pipeline::make_desk_ar_model(m, seed);
    std::vector<std::uint8_t> prompt;
    if (!prompt_path.empty()) prompt = cat::read_file_bytes(prompt_path);
    cat::pipeline::TtsOptions opts{tts_depth, max_frames, temperature, seed};
    const auto r = cat::pipeline::tts_simulate(m, ar, prompt_text, text, prompt, opts);
    if (!out_path.empty()) cat::write_file_bytes(out_path, r.stream);
    if (!wav_out.empty()) cat::write_wav_file(wav_out, r.waveform);
    const bool closed = r.waveform.samples.size() == r.tokens.frames() * 1920 &&
                        r.reencoded.frames() == r.tokens.frames() &&
                        r.reencoded.depth() == r.tokens.depth() &&
                        cat::bitstream::truncate_to_depth(r.stream, tts_depth) == r.stream;
    emit(common, {{"frames", r.tokens.frames()},
                  {"depth", r.tokens.depth()},
                  {"samples", r.waveform.samples.size()},
                  {"stream_bytes", r.stream.size()},
                  {"reencoded_frames", r.reencoded.frames()},
                  {"closed", closed}});
    if (!closed) throw cat::InvariantError("ttssim: pipeline did not close");
  });

  // selfcheck
  auto* selfcheck = app.add_subcommand("selfcheck", "Run the acceptance property suites");
  add_common(selfcheck);
  selfcheck->callback([&] {
    json suites = json::array();
    bool ok = true;
    for (const auto& c : cat::checks::criteria()) {
      const auto r = cat::checks::run_criterion(c);
      if (!common.json_out) std::cout << cat::checks::format_result(r) << std::endl;
      suites.push_back({{"id", r.id},
                        {"name", r.name},
                        {"passed", r.passed},
                        {"checks_passed", r.checks_passed},
                        {"checks_total", r.checks_total},
                        {"seconds", r.seconds},
                        {"detail", r.detail}});
      if (!r.passed) {
        ok = false;
        break;
      }
    }
    if (common.json_out) std::cout << json{{"passed", ok}, {"suites", suites}}.dump() << "\n";
    if (!ok) exit_code = kExitInternal;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUser;
  } catch (const cat::InvariantError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const cat::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return exit_code;
}
