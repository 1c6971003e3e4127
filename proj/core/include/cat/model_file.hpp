#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cat/codec.hpp"
#include "cat/rvq.hpp"

namespace cat {

/// Codec weights plus the quantizer that sits between encoder and decoder.
struct CatModel {
  codec::CodecParams codec;
  rvq::RvqStack rvq;

  void validate() const;
};

/// Desk codec and an 8 x 1024 x 8 quantizer at the codec latent width,
/// already rounded to f32 so it survives a save/load unchanged.
CatModel make_desk_model(std::uint64_t seed);

/// "CATW" | u32 version | u32 json length | json {codec, rvq} | f32 LE tensors.
/// Tensor order: encoder stages, decoder stages, then per RVQ layer entries, w_in, w_out.
std::vector<std::uint8_t> save_model(const CatModel& model);
CatModel load_model(std::span<const std::uint8_t> bytes);

CatModel read_model_file(const std::filesystem::path& path);
void write_model_file(const std::filesystem::path& path, const CatModel& model);

}  // namespace cat
