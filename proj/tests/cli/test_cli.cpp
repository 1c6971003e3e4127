#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "cat/bitstream.hpp"
#include "cat/wav.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string("\"") + CATTOK_CLI_PATH + "\" " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json run_json(const std::string& args) {
  const Run r = run(args + " --json");
  REQUIRE(r.code == 0);
  return json::parse(r.out);
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("cattok_cli_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void write_tone(const std::string& path, std::size_t n) {
  cat::Waveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(0.25 * std::sin(2.0 * 3.141592653589793 * 330.0 * i / 24000.0));
  cat::write_wav_file(path, w);
}

}  // namespace

TEST_CASE("bitrate prints the product") {
  const Run r = run("bitrate 32 1024 12.5");
  CHECK(r.code == 0);
  CHECK(r.out == "4000\n");
  CHECK(run_json("bitrate --layers 8 --codebook 1024 --rate 12.5").at("bps").get<double>() == 1000.0);
}

TEST_CASE("one second of silence encodes at 1000 bps") {
  TempDir dir;
  cat::Waveform zero;
  zero.samples.assign(24000, 0.0);
  cat::write_wav_file(dir / "zero.wav", zero);
  const json j = run_json("encode --in " + dir / "zero.wav" + " --out " + dir / "zero.cat --depth 8");
  CHECK(j.at("frames") == 13);
  CHECK(j.at("bitrate_bps").get<double>() == 1000.0);
  const json info = run_json("info --in " + dir / "zero.cat");
  CHECK(info.at("n_frames") == 13);
  CHECK(info.at("n_layers") == 8);
}

TEST_CASE("round trip, transcode and depth") {
  TempDir dir;
  write_tone(dir / "tone.wav", 1920 * 4 + 321);
  REQUIRE(run("init --out " + dir / "model.catw").code == 0);
  const std::string model = " --model " + dir / "model.catw";
  REQUIRE(run("encode" + model + " --in " + dir / "tone.wav" + " --out " + dir / "full.cat").code == 0);

  REQUIRE(run("transcode --in " + dir / "full.cat" + " --out " + dir / "same.cat --depth 8").code == 0);
  CHECK(cat::read_file_bytes(dir / "same.cat") == cat::read_file_bytes(dir / "full.cat"));

  REQUIRE(run("transcode --in " + dir / "full.cat" + " --out " + dir / "one.cat --depth 1").code == 0);
  CHECK(cat::bitstream::read_header(cat::read_file_bytes(dir / "one.cat")).n_layers == 1);

  REQUIRE(run("decode" + model + " --in " + dir / "full.cat" + " --out " + dir / "full.wav").code == 0);
  REQUIRE(run("decode" + model + " --in " + dir / "one.cat" + " --out " + dir / "one.wav").code == 0);
  const auto full = cat::read_wav_file(dir / "full.wav");
  const auto one = cat::read_wav_file(dir / "one.wav");
  CHECK(full.samples.size() == 1920 * 4 + 321);
  CHECK(one.samples.size() == full.samples.size());
  CHECK(full.samples != one.samples);

  const json loss = run_json("loss --a " + dir / "tone.wav" + " --b " + dir / "full.wav");
  CHECK(loss.at("mel_loss").get<double>() > 0.0);
}

TEST_CASE("user errors exit with code 2") {
  TempDir dir;
  write_tone(dir / "tone.wav", 1920);
  CHECK(run("encode --in " + dir / "tone.wav" + " --out " + dir / "x.cat --depth 9").code == 2);
  REQUIRE(run("encode --in " + dir / "tone.wav" + " --out " + dir / "x.cat").code == 0);
  auto bytes = cat::read_file_bytes(dir / "x.cat");
  bytes.pop_back();
  cat::write_file_bytes(dir / "cut.cat", bytes);
  CHECK(run("decode --in " + dir / "cut.cat" + " --out " + dir / "y.wav").code == 2);
  CHECK(run("info --in " + dir / "missing.cat").code == 2);
  CHECK(run("transcode --in " + dir / "x.cat" + " --out " + dir / "z.cat --depth 0").code == 2);
  CHECK(run("no-such-command").code == 2);
}

TEST_CASE("text-to-speech simulation reports a closed pipeline") {
  TempDir dir;
  const json j = run_json("ttssim --text hi --depth 4 --max-frames 3 --out " + dir / "gen.cat" + " --wav " +
                          dir / "gen.wav");
  CHECK(j.at("closed") == true);
  CHECK(j.at("frames") == 3);
  CHECK(j.at("depth") == 4);
  CHECK(cat::read_wav_file(dir / "gen.wav").samples.size() == 3 * 1920);
  CHECK(cat::bitstream::read_header(cat::read_file_bytes(dir / "gen.cat")).n_frames == 3);
}

TEST_CASE("codebook training on synthetic clusters") {
  const json j = run_json("train-codebook --steps 100");
  CHECK(j.at("final_error").get<double>() < j.at("initial_error").get<double>());
  CHECK(j.at("frames") == 256);
}
