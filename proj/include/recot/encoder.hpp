#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "recot/tensor.hpp"

namespace recot {

// H x W x C image, row-major with channels innermost.
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

// Tokens for T frames: tokens[T x N x D] plus one timestamp (seconds) per frame.
struct FrameTokenGrid {
  Tensor tokens;
  std::vector<double> timestamps;

  FrameTokenGrid() = default;
  FrameTokenGrid(Tensor tokens, std::vector<double> timestamps);
  // Timestamps 0, 1, 2, ... seconds.
  explicit FrameTokenGrid(Tensor tokens);

  std::size_t frames() const { return tokens.dim(0); }
  std::size_t tokens_per_frame() const { return tokens.dim(1); }
  std::size_t dim() const { return tokens.dim(2); }
};

struct FrozenEncoderConfig {
  std::size_t patch = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t dim = 32;
  double position_scale = 1.0;
  std::uint64_t seed = 7;

  std::size_t tokens_per_frame() const { return (height / patch) * (width / patch); }
  std::size_t patch_size() const { return patch * patch * channels; }
};

// Fixed patch encoder: token_i = patch_i . W + position_i. Nothing here is
// trainable; W and the sinusoidal positions are pure functions of the config.
class FrozenEncoder {
 public:
  explicit FrozenEncoder(FrozenEncoderConfig config);

  const FrozenEncoderConfig& config() const { return config_; }
  // [patch_size x dim]. Orthonormal columns when patch_size >= dim,
  // orthonormal rows otherwise.
  const Tensor& weights() const { return weights_; }
  // [N x dim]
  const Tensor& positions() const { return positions_; }

  std::size_t tokens_per_frame() const { return config_.tokens_per_frame(); }
  std::size_t dim() const { return config_.dim; }

  // Pixel patch of token `index` flattened in (dy, dx, c) order.
  std::vector<double> patch_of(const Frame& frame, std::size_t index) const;
  // Writes a flattened patch back into `frame` at token `index`.
  void write_patch(Frame& frame, std::size_t index, const std::vector<double>& patch) const;
  // Patch whose projection is `content` (requires orthonormal columns).
  std::vector<double> patch_for_content(const std::vector<double>& content) const;

  Tensor encode_frame(const Frame& frame) const;
  FrameTokenGrid encode_video(const std::vector<Frame>& frames, std::vector<double> timestamps = {}) const;

 private:
  void check_frame(const Frame& frame) const;

  FrozenEncoderConfig config_;
  Tensor weights_;
  Tensor positions_;
};

// Sinusoidal table [count x dim]: sin on even, cos on odd columns.
Tensor sinusoidal_positions(std::size_t count, std::size_t dim, double scale);

}  // namespace recot
