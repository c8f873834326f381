#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "recot/encoder.hpp"
#include "recot/selector.hpp"

namespace recot {

inline constexpr std::size_t kTextureBasis = 8;
inline constexpr std::size_t kNeedlePatterns = 4;

// Fixed geometry shared by every haystack: texture basis patches, one token
// direction per needle pattern (orthogonal to all positional offsets and all
// projected texture patches) and the needle amplitude.
struct HaystackWorld {
  FrozenEncoder encoder;
  std::vector<std::vector<double>> texture_basis;  // kTextureBasis patches
  std::vector<Tensor> needle_directions;           // kNeedlePatterns unit [D] vectors
  double needle_amplitude = 40.0;
  double texture_scale = 1.5;  // stationary std of the texture coefficients
  double texture_phi = 0.9;    // AR(1) coefficient over time

  explicit HaystackWorld(FrozenEncoderConfig config = {}, std::uint64_t seed = 5);
};

const std::array<std::string, kNeedlePatterns>& pattern_names();
// Query text for a pattern; `variant` picks one of several phrasings.
std::string needle_query(std::size_t pattern, std::size_t variant);
std::size_t query_variants();

struct HaystackSpec {
  std::size_t frames = 16;
  std::size_t needle_frame = 0;
  std::size_t pattern = 0;
  double noise = 0.05;  // pixel noise std
  std::uint64_t seed = 0;

  void validate() const;
};

struct Haystack {
  std::vector<Frame> frames;
  Tensor probe;  // [D]
  std::size_t needle_frame = 0;
  std::size_t needle_token = 0;
  std::size_t pattern = 0;
};

// Structured-noise frames with one needle token planted at spec.needle_frame.
// Retries the pixel noise until the needle token's cosine with the probe is >= 0.9.
Haystack gen_haystack(const HaystackSpec& spec, const HaystackWorld& world);

// Texture-only frames.
std::vector<Frame> texture_frames(const HaystackWorld& world, std::size_t frames, double noise, std::uint64_t seed,
                                  double basis0_mean = 0.0);

// Encoded haystacks with a needle at a random frame/pattern: the training corpus.
std::vector<FrameTokenGrid> haystack_corpus(const HaystackWorld& world, std::size_t clips, std::size_t frames,
                                            std::uint64_t seed, double noise = 0.05);

// Selector examples over raw haystack tokens; the needle token is the only relevant one.
std::vector<SelectorExample> needle_examples(const HaystackWorld& world, std::size_t count, std::size_t frames,
                                             std::uint64_t seed, double noise = 0.05);

// Clips where a fixed subset of token positions is flat background (zero
// patch, constant over time) and the rest is uniform noise redrawn per frame.
struct PlantedClip {
  FrameTokenGrid grid;
  std::vector<std::uint8_t> background;  // [N]
};

std::vector<PlantedClip> planted_redundancy_corpus(const FrozenEncoder& encoder, std::size_t clips,
                                                   std::size_t frames, std::size_t background_tokens,
                                                   std::uint64_t seed);

// Two-class clips: the mean of texture coefficient 0 is -shift (class 0) or +shift (class 1).
struct LabeledClip {
  FrameTokenGrid grid;
  int label = 0;
};

std::vector<LabeledClip> labeled_texture_clips(const HaystackWorld& world, std::size_t clips, std::size_t frames,
                                               double shift, std::uint64_t seed);

}  // namespace recot
