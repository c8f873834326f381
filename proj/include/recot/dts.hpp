#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "recot/binder.hpp"
#include "recot/encoder.hpp"
#include "recot/mask_plan.hpp"

namespace recot {

struct DtsConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t encoder_depth = 2;
  // Unset: init_dts picks the depth whose parameter count is closest to half
  // the encoder's.
  std::optional<std::size_t> decoder_depth;
  std::size_t ratio = 4;
  std::size_t tokens_per_frame = 16;
  std::size_t mlp_ratio = 4;

  // Checks everything except the decoder/encoder balance.
  void validate() const;
};

// Allowed decoder / encoder parameter ratio.
inline constexpr double kMinDecoderRatio = 0.4;
inline constexpr double kMaxDecoderRatio = 0.6;

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Pre-norm factorized block: spatial attention, temporal attention, MLP.
struct BlockParams {
  Tensor norm1_gamma, norm1_beta;
  AttentionParams spatial;
  Tensor norm2_gamma, norm2_beta;
  AttentionParams temporal;
  Tensor norm3_gamma, norm3_beta;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct DtsModel {
  DtsConfig config;  // decoder_depth always resolved
  std::vector<BlockParams> encoder;
  Tensor merge_kernel;  // [r x 1 x 1 x D x D]
  Tensor merge_bias;    // [D]
  Tensor mask_token;    // [D]
  std::vector<BlockParams> decoder;
  Tensor head_weight;  // [D x D]
  Tensor head_bias;    // [D]

  // Every trainable tensor with a stable dotted name, encoder part first.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
};

enum class ModelPart { encoder, decoder };

std::size_t block_param_count(std::size_t dim, std::size_t mlp_ratio);
// Exact scalar parameter count implied by a config; the merger and the mask
// token belong to the encoder, the output head to the decoder.
std::size_t param_count(const DtsConfig& config, std::size_t decoder_depth, ModelPart part);
std::size_t param_count(const DtsModel& model, ModelPart part);

// Picks or validates the decoder depth; throws ConfigError listing the
// achievable ratios when none lands in [0.4, 0.6].
std::size_t resolve_decoder_depth(const DtsConfig& config);

DtsModel init_dts(DtsConfig config, std::uint64_t seed);

// Splits N tokens into a rows x cols grid (rows = largest divisor <= sqrt(N)).
std::pair<std::size_t, std::size_t> token_grid_layout(std::size_t tokens_per_frame);

// Output of the temporal merger. Slice s covers input frames windows[s].
struct CompressedGrid {
  Tensor tokens;  // [ceil(T/r) x N x D]
  std::size_t source_frames = 0;
  std::size_t ratio = 1;
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // [begin, end)

  std::size_t merged_frames() const { return tokens.dim(0); }
  double tokens_per_source_frame() const;
};

std::size_t merged_frame_count(std::size_t frames, std::size_t ratio);
std::vector<std::pair<std::size_t, std::size_t>> merge_windows(std::size_t frames, std::size_t ratio);

// ---- graph-level forward ---------------------------------------------------

Var attention(Var x, const AttentionParams& p, std::size_t heads, ParamBinder& bind);
Var st_block(Var x, const BlockParams& p, std::size_t heads, ParamBinder& bind);
Var temporal_merge(Var x, const DtsModel& model, ParamBinder& bind);
// Mask fill, encoder blocks, merge: [T x N x D] -> [ceil(T/r) x N x D].
Var dts_encode(Var tokens, const DtsModel& model, const MaskPlan* mask, ParamBinder& bind);
// Repeat-by-r upsampling, decoder blocks, output head: -> [T x N x D].
Var dts_decode(Var compressed, const DtsModel& model, std::size_t target_frames, ParamBinder& bind);

// ---- value-level forward ---------------------------------------------------

CompressedGrid dts_forward(const FrameTokenGrid& grid, const DtsModel& model, const MaskPlan* mask = nullptr);
Tensor decoder_forward(const CompressedGrid& compressed, const DtsModel& model, std::size_t target_frames);

}  // namespace recot
