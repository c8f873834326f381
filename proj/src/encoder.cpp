#include "recot/encoder.hpp"

#include <cmath>

#include "recot/errors.hpp"
#include "recot/rng.hpp"

namespace recot {

FrameTokenGrid::FrameTokenGrid(Tensor t, std::vector<double> ts) : tokens(std::move(t)), timestamps(std::move(ts)) {
  if (tokens.rank() != 3) throw DimensionError("FrameTokenGrid needs a [T x N x D] tensor, got " + shape_string(tokens.shape()));
  if (timestamps.size() != tokens.dim(0)) {
    throw DimensionError("FrameTokenGrid: " + std::to_string(timestamps.size()) + " timestamps for " +
                         std::to_string(tokens.dim(0)) + " frames");
  }
  for (std::size_t t = 1; t < timestamps.size(); ++t) {
    if (!(timestamps[t] > timestamps[t - 1])) throw UsageError("FrameTokenGrid timestamps must strictly increase");
  }
}

FrameTokenGrid::FrameTokenGrid(Tensor t) : FrameTokenGrid(t, [&] {
  std::vector<double> ts(t.rank() == 3 ? t.dim(0) : 0);
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = static_cast<double>(i);
  return ts;
}()) {}

Tensor sinusoidal_positions(std::size_t count, std::size_t dim, double scale) {
  Tensor table({count, dim});
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(i) * freq;
      table.at({i, j}) = scale * (j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return table;
}

namespace {

// Gram-Schmidt over `count` vectors of length `length` stored as rows.
void orthonormalize_rows(std::vector<double>& rows, std::size_t count, std::size_t length) {
  for (std::size_t r = 0; r < count; ++r) {
    double* v = rows.data() + r * length;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t q = 0; q < r; ++q) {
        const double* u = rows.data() + q * length;
        double proj = 0.0;
        for (std::size_t i = 0; i < length; ++i) proj += u[i] * v[i];
        for (std::size_t i = 0; i < length; ++i) v[i] -= proj * u[i];
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < length; ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < length; ++i) v[i] /= norm;
  }
}

}  // namespace

FrozenEncoder::FrozenEncoder(FrozenEncoderConfig config) : config_(config) {
  if (config_.patch == 0 || config_.dim == 0 || config_.channels == 0) {
    throw ConfigError("frozen encoder: patch, dim and channels must be positive");
  }
  if (config_.height % config_.patch != 0 || config_.width % config_.patch != 0 || config_.height == 0 ||
      config_.width == 0) {
    throw ConfigError("frozen encoder: frame " + std::to_string(config_.height) + "x" + std::to_string(config_.width) +
                      " is not divisible by patch size " + std::to_string(config_.patch));
  }
  const std::size_t k = config_.patch_size();
  const std::size_t d = config_.dim;
  Rng rng(config_.seed);
  std::vector<double> draws(k * d);
  for (double& v : draws) v = rng.normal();
  std::vector<double> w(k * d);
  if (k >= d) {
    // d orthonormal columns of length k, generated as rows then transposed.
    orthonormalize_rows(draws, d, k);
    for (std::size_t col = 0; col < d; ++col)
      for (std::size_t row = 0; row < k; ++row) w[row * d + col] = draws[col * k + row];
  } else {
    orthonormalize_rows(draws, k, d);
    w = draws;
  }
  weights_ = Tensor({k, d}, std::move(w));
  positions_ = sinusoidal_positions(config_.tokens_per_frame(), d, config_.position_scale);
}

void FrozenEncoder::check_frame(const Frame& frame) const {
  if (frame.height != config_.height || frame.width != config_.width || frame.channels != config_.channels) {
    throw ConfigError("frame " + std::to_string(frame.height) + "x" + std::to_string(frame.width) + "x" +
                      std::to_string(frame.channels) + " does not match encoder " + std::to_string(config_.height) +
                      "x" + std::to_string(config_.width) + "x" + std::to_string(config_.channels));
  }
  if (frame.pixels.size() != frame.height * frame.width * frame.channels) {
    throw DimensionError("frame pixel buffer size does not match its extents");
  }
}

std::vector<double> FrozenEncoder::patch_of(const Frame& frame, std::size_t index) const {
  const std::size_t p = config_.patch;
  const std::size_t cols = config_.width / p;
  const std::size_t y0 = (index / cols) * p, x0 = (index % cols) * p;
  std::vector<double> patch;
  patch.reserve(config_.patch_size());
  for (std::size_t dy = 0; dy < p; ++dy)
    for (std::size_t dx = 0; dx < p; ++dx)
      for (std::size_t c = 0; c < config_.channels; ++c) patch.push_back(frame.at(y0 + dy, x0 + dx, c));
  return patch;
}

void FrozenEncoder::write_patch(Frame& frame, std::size_t index, const std::vector<double>& patch) const {
  if (patch.size() != config_.patch_size()) throw DimensionError("write_patch: wrong patch length");
  const std::size_t p = config_.patch;
  const std::size_t cols = config_.width / p;
  const std::size_t y0 = (index / cols) * p, x0 = (index % cols) * p;
  std::size_t i = 0;
  for (std::size_t dy = 0; dy < p; ++dy)
    for (std::size_t dx = 0; dx < p; ++dx)
      for (std::size_t c = 0; c < config_.channels; ++c) frame.at(y0 + dy, x0 + dx, c) = patch[i++];
}

std::vector<double> FrozenEncoder::patch_for_content(const std::vector<double>& content) const {
  const std::size_t k = config_.patch_size(), d = config_.dim;
  if (k < d) throw ConfigError("patch_for_content needs patch_size >= dim");
  if (content.size() != d) throw DimensionError("patch_for_content: content length mismatch");
  // W has orthonormal columns, so W . c projects back to c exactly.
  std::vector<double> patch(k, 0.0);
  for (std::size_t row = 0; row < k; ++row)
    for (std::size_t col = 0; col < d; ++col) patch[row] += weights_[row * d + col] * content[col];
  return patch;
}

Tensor FrozenEncoder::encode_frame(const Frame& frame) const {
  check_frame(frame);
  const std::size_t n = tokens_per_frame(), d = config_.dim, k = config_.patch_size();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> patch = patch_of(frame, i);
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < k; ++q) acc += patch[q] * weights_[q * d + j];
      out[i * d + j] = acc + positions_[i * d + j];
    }
  }
  return out;
}

FrameTokenGrid FrozenEncoder::encode_video(const std::vector<Frame>& frames, std::vector<double> timestamps) const {
  if (frames.empty()) throw UsageError("encode_video: empty frame list");
  const std::size_t n = tokens_per_frame(), d = config_.dim;
  std::vector<double> data;
  data.reserve(frames.size() * n * d);
  for (const Frame& f : frames) {
    const Tensor tokens = encode_frame(f);
    data.insert(data.end(), tokens.values().begin(), tokens.values().end());
  }
  Tensor tokens({frames.size(), n, d}, std::move(data));
  if (timestamps.empty()) return FrameTokenGrid(std::move(tokens));
  return FrameTokenGrid(std::move(tokens), std::move(timestamps));
}

}  // namespace recot
