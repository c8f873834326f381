#include "recot/sgm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recot/errors.hpp"
#include "recot/rng.hpp"

namespace recot {

SgmParams init_sgm(std::size_t dim) {
  if (dim == 0) throw ConfigError("sgm: dim must be positive");
  SgmParams p{Tensor({dim, dim}, 0.0), Tensor({dim, dim}, 0.0)};
  for (std::size_t i = 0; i < dim; ++i) {
    p.temp_query[i * dim + i] = 1.0;
    p.spatio_query[i * dim + i] = 1.0;
  }
  return p;
}

ScoreVars sgm_score_graph(Var tokens, const SgmParams& params, ParamBinder& bind) {
  const Shape shape = tokens.shape();
  if (shape.size() != 3) throw DimensionError("sgm_scores: expected [T x N x D], got " + shape_string(shape));
  const std::size_t t = shape[0], n = shape[1], d = shape[2];
  if (params.temp_query.shape() != Shape{d, d} || params.spatio_query.shape() != Shape{d, d}) {
    throw DimensionError("sgm_scores: token dim " + std::to_string(d) + " does not match queries " +
                         shape_string(params.temp_query.shape()) + " / " + shape_string(params.spatio_query.shape()));
  }
  Var prev = reshape(shift_prev(tokens), {t * n, d});
  Var s_temp = reshape(matmul(prev, bind(params.temp_query)), {t, n, d});
  Var score_temp = dot_lastdim(tokens, s_temp);

  Var s_spa = matmul(mean_axis(tokens, 1), bind(params.spatio_query));  // [T x D]
  Var score_spa = reshape(batched_matmul(tokens, reshape(s_spa, {t, d, 1})), {t, n});
  return {score_temp, score_spa, add(score_temp, score_spa)};
}

TokenScores sgm_scores(const FrameTokenGrid& grid, const SgmParams& params) {
  Tape tape;
  ParamBinder bind(tape, false);
  ScoreVars v = sgm_score_graph(tape.constant(grid.tokens), params, bind);
  return {v.scores.value(), v.score_temp.value(), v.score_spa.value()};
}

std::size_t mask_count(double ratio, std::size_t total) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("mask ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
}

namespace {

MaskPlan empty_plan(std::size_t frames, std::size_t n, double ratio, std::uint64_t seed) {
  MaskPlan plan;
  plan.frames = frames;
  plan.tokens_per_frame = n;
  plan.mask.assign(frames * n, 0);
  plan.ratio = ratio;
  plan.seed = seed;
  return plan;
}

}  // namespace

MaskPlan make_mask_plan(const TokenScores& scores, double ratio, std::uint64_t seed) {
  const std::size_t frames = scores.frames(), n = scores.tokens_per_frame();
  const std::size_t total = frames * n;
  const std::size_t m = mask_count(ratio, total);
  MaskPlan plan = empty_plan(frames, n, ratio, seed);
  if (m == 0) return plan;

  const auto s = scores.scores.values();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });

  long double sum = 0;
  for (double v : s) sum += v;
  const double global_mean = static_cast<double>(sum / total);

  const double width = std::max(ratio, std::min(2.0 * ratio, 1.0 - ratio));
  const std::size_t width_count =
      std::max(m, std::min(total, static_cast<std::size_t>(std::llround(width * static_cast<double>(total)))));
  std::vector<std::size_t> pool;
  for (std::size_t k = 0; k < width_count; ++k) {
    if (s[order[k]] <= global_mean) pool.push_back(order[k]);
  }
  if (pool.size() < m) pool.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));

  Rng rng(seed);
  for (std::size_t k : rng.sample_without_replacement(pool.size(), m)) plan.mask[pool[k]] = 1;
  return plan;
}

MaskPlan random_mask_plan(std::size_t frames, std::size_t n, double ratio, std::uint64_t seed) {
  const std::size_t m = mask_count(ratio, frames * n);
  MaskPlan plan = empty_plan(frames, n, ratio, seed);
  Rng rng(seed);
  for (std::size_t k : rng.sample_without_replacement(frames * n, m)) plan.mask[k] = 1;
  return plan;
}

std::vector<std::uint8_t> difficulty_split(const std::vector<double>& errors, double ratio) {
  const std::size_t total = errors.size();
  const std::size_t easy = mask_count(ratio, total);
  if (easy == 0 || easy >= total) return {};
  if (std::all_of(errors.begin(), errors.end(), [&](double e) { return e == errors.front(); })) return {};
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] < errors[b]; });
  std::vector<std::uint8_t> hard(total, 1);
  for (std::size_t k = 0; k < easy; ++k) hard[order[k]] = 0;
  return hard;
}

Var sgm_aux_loss(Var scores, const std::vector<std::uint8_t>& hard) {
  const Shape shape = scores.shape();
  if (shape_numel(shape) != hard.size()) {
    throw DimensionError("sgm_aux_loss: split has " + std::to_string(hard.size()) + " entries for scores " +
                         shape_string(shape));
  }
  const std::size_t n_hard = static_cast<std::size_t>(std::count(hard.begin(), hard.end(), 1));
  const std::size_t n_easy = hard.size() - n_hard;
  if (n_hard == 0 || n_easy == 0) throw UsageError("sgm_aux_loss: split needs both hard and easy tokens");
  // Signed weights: +1/|H| on hard tokens, -1/|E| on easy ones.
  Tensor weights(shape, 0.0);
  for (std::size_t k = 0; k < hard.size(); ++k) {
    weights[k] = hard[k] ? 1.0 / static_cast<double>(n_hard) : -1.0 / static_cast<double>(n_easy);
  }
  Tape& tape = *scores.tape();
  Var separation = sum(mul(scores, tape.constant(weights)));
  return softplus(sub(tape.constant(Tensor::scalar(kAuxMargin)), separation));
}

}  // namespace recot
