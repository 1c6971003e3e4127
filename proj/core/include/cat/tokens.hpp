#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cat/error.hpp"

namespace cat {

/// Frames x depth code indices; column k holds the layer-k codes.
class TokenMatrix {
 public:
  TokenMatrix() = default;
  TokenMatrix(std::size_t frames, std::size_t depth, std::int32_t fill = 0)
      : frames_(frames), depth_(depth), codes_(frames * depth, fill) {}

  std::size_t frames() const { return frames_; }
  std::size_t depth() const { return depth_; }

  std::int32_t& at(std::size_t t, std::size_t k) { return codes_[t * depth_ + k]; }
  std::int32_t at(std::size_t t, std::size_t k) const { return codes_[t * depth_ + k]; }
  std::span<const std::int32_t> row(std::size_t t) const { return {codes_.data() + t * depth_, depth_}; }
  std::span<std::int32_t> row(std::size_t t) { return {codes_.data() + t * depth_, depth_}; }
  std::span<const std::int32_t> codes() const { return codes_; }

  /// First `depth` columns.
  TokenMatrix truncated(std::size_t depth) const {
    require(depth <= depth_, "TokenMatrix::truncated: depth " + std::to_string(depth) + " exceeds " +
                                 std::to_string(depth_));
    TokenMatrix out(frames_, depth);
    for (std::size_t t = 0; t < frames_; ++t) {
      for (std::size_t k = 0; k < depth; ++k) out.at(t, k) = at(t, k);
    }
    return out;
  }

  void append_frame(std::span<const std::int32_t> frame) {
    if (frames_ == 0 && depth_ == 0) depth_ = frame.size();
    require(frame.size() == depth_, "TokenMatrix::append_frame: depth mismatch");
    codes_.insert(codes_.end(), frame.begin(), frame.end());
    ++frames_;
  }

  friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;

 private:
  std::size_t frames_ = 0;
  std::size_t depth_ = 0;
  std::vector<std::int32_t> codes_;
};

}  // namespace cat
