#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace recot {

// Per-token mask decision for a [T x N] token grid (row-major, frame-major).
struct MaskPlan {
  std::size_t frames = 0;
  std::size_t tokens_per_frame = 0;
  std::vector<std::uint8_t> mask;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (std::uint8_t m : mask) n += m ? 1 : 0;
    return n;
  }
  bool masked(std::size_t frame, std::size_t token) const { return mask[frame * tokens_per_frame + token] != 0; }
};

}  // namespace recot
