#include "cat/model_file.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "cat/error.hpp"
#include "cat/wav.hpp"
#include "json.hpp"

namespace cat {
namespace {

constexpr char kMagic[4] = {'C', 'A', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("CATW: truncated ") + what + " at byte " + std::to_string(pos_));
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
           static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void CatModel::validate() const {
  require(!rvq.layers.empty(), "model: quantizer has no layers");
  require(rvq.d_model() == static_cast<std::size_t>(codec.cfg.latent_dim()),
          "model: quantizer width " + std::to_string(rvq.d_model()) + " != codec latent width " +
              std::to_string(codec.cfg.latent_dim()));
}

CatModel make_desk_model(std::uint64_t seed) {
  CatModel m;
  m.codec = codec::CodecParams::init(codec::CodecConfig::desk(), seed);
  rvq::RvqConfig rc;
  rc.d_model = m.codec.cfg.latent_dim();
  m.rvq = rvq::RvqStack::init(rc, seed ^ 0x9E3779B97F4A7C15ull);
  m.rvq.snap_to_float();
  return m;
}

std::vector<std::uint8_t> save_model(const CatModel& model) {
  model.validate();
  nlohmann::json j;
  j["codec"] = nlohmann::json::parse(model.codec.cfg.to_json());
  j["rvq"] = nlohmann::json::parse(model.rvq.config().to_json());
  const std::string blob = j.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out.insert(out.end(), blob.begin(), blob.end());
  model.codec.for_each_tensor([&](std::span<const float> t) {
    for (float v : t) put_f32(out, v);
  });
  model.rvq.for_each_tensor([&](std::span<const double> t) {
    for (double v : t) put_f32(out, static_cast<float>(v));
  });
  return out;
}

CatModel load_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("CATW: bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("CATW: unsupported version " + std::to_string(version));
  const std::uint32_t len = r.u32("config length");
  auto blob = r.take(len, "config");

  codec::CodecConfig ccfg;
  rvq::RvqConfig rcfg;
  try {
    const auto j = nlohmann::json::parse(blob.begin(), blob.end());
    ccfg = codec::CodecConfig::from_json(j.at("codec").dump());
    rcfg = rvq::RvqConfig::from_json(j.at("rvq").dump());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("CATW: config: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("CATW: invalid config: ") + e.what());
  }

  CatModel m;
  m.codec = codec::CodecParams::init(ccfg, 0);
  m.rvq = rvq::RvqStack::init(rcfg, 0);
  m.codec.for_each_tensor([&](std::span<float> t) {
    for (float& v : t) v = r.f32("codec tensor");
  });
  m.rvq.for_each_tensor([&](std::span<double> t) {
    for (double& v : t) v = static_cast<double>(r.f32("quantizer tensor"));
  });
  if (r.remaining() != 0) throw FormatError("CATW: " + std::to_string(r.remaining()) + " trailing bytes");
  m.codec.refresh_fingerprint();
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("CATW: ") + e.what());
  }
  return m;
}

CatModel read_model_file(const std::filesystem::path& path) { return load_model(read_file_bytes(path)); }

void write_model_file(const std::filesystem::path& path, const CatModel& model) {
  write_file_bytes(path, save_model(model));
}

}  // namespace cat
