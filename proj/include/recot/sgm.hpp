#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "recot/binder.hpp"
#include "recot/encoder.hpp"
#include "recot/mask_plan.hpp"

namespace recot {

struct SgmParams {
  Tensor temp_query;     // [D x D]
  Tensor spatio_query;   // [D x D]

  std::size_t dim() const { return temp_query.dim(0); }
};

// Identity queries: score_temp = <x[t,i], x[t-1,i]>, score_spa = <x[t,i], mean_t>.
SgmParams init_sgm(std::size_t dim);

struct TokenScores {
  Tensor scores;      // [T x N]
  Tensor score_temp;  // [T x N]
  Tensor score_spa;   // [T x N]

  std::size_t frames() const { return scores.dim(0); }
  std::size_t tokens_per_frame() const { return scores.dim(1); }
};

struct ScoreVars {
  Var score_temp;
  Var score_spa;
  Var scores;
};

// tokens [T x N x D] -> per-token scores, all [T x N].
ScoreVars sgm_score_graph(Var tokens, const SgmParams& params, ParamBinder& bind);
TokenScores sgm_scores(const FrameTokenGrid& grid, const SgmParams& params);

std::size_t mask_count(double ratio, std::size_t total);

// Masks round(ratio * T * N) tokens, sampled uniformly from the low-score
// pool. The pool holds tokens in the bottom max(ratio, min(2 ratio, 1 - ratio))
// fraction (ties by frame, then token) whose score does not exceed the mean;
// it falls back to the exact bottom-m set if it is too small.
MaskPlan make_mask_plan(const TokenScores& scores, double ratio, std::uint64_t seed);
MaskPlan random_mask_plan(std::size_t frames, std::size_t tokens_per_frame, double ratio, std::uint64_t seed);

// Which tokens count as hard (1) or easy (0) for the auxiliary loss: the
// round(ratio * count) lowest-error tokens are easy. Empty when the split is
// degenerate (ratio 0, nothing hard, or all errors equal).
std::vector<std::uint8_t> difficulty_split(const std::vector<double>& token_errors, double ratio);

inline constexpr double kAuxMargin = 1.0;

// softplus(margin - (mean score over hard - mean score over easy)).
Var sgm_aux_loss(Var scores, const std::vector<std::uint8_t>& hard);

}  // namespace recot
