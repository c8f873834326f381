#include "recot/dts.hpp"

#include <cmath>
#include <sstream>

#include "recot/errors.hpp"
#include "recot/rng.hpp"

namespace recot {

void DtsConfig::validate() const {
  if (dim == 0 || heads == 0) throw ConfigError("dts: dim and heads must be positive");
  if (dim % heads != 0) {
    throw ConfigError("dts: dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (encoder_depth == 0) throw ConfigError("dts: encoder_depth must be >= 1");
  if (decoder_depth && *decoder_depth == 0) throw ConfigError("dts: decoder_depth must be >= 1");
  if (ratio == 0) throw ConfigError("dts: ratio must be >= 1");
  if (tokens_per_frame == 0) throw ConfigError("dts: tokens_per_frame must be >= 1");
  if (mlp_ratio == 0) throw ConfigError("dts: mlp_ratio must be >= 1");
}

std::size_t block_param_count(std::size_t dim, std::size_t mlp_ratio) {
  const std::size_t norms = 3 * 2 * dim;
  const std::size_t attn = 2 * (4 * dim * dim + 4 * dim);
  const std::size_t hidden = mlp_ratio * dim;
  const std::size_t mlp = dim * hidden + hidden + hidden * dim + dim;
  return norms + attn + mlp;
}

std::size_t param_count(const DtsConfig& config, std::size_t decoder_depth, ModelPart part) {
  const std::size_t d = config.dim;
  const std::size_t block = block_param_count(d, config.mlp_ratio);
  if (part == ModelPart::encoder) {
    return config.encoder_depth * block + (config.ratio * d * d + d) + d;
  }
  return decoder_depth * block + d * d + d;
}

std::size_t param_count(const DtsModel& model, ModelPart part) {
  std::size_t total = 0;
  const auto params = model.parameters();
  for (const auto& [name, tensor] : params) {
    const bool is_decoder = name.rfind("decoder.", 0) == 0 || name.rfind("head.", 0) == 0;
    if (is_decoder == (part == ModelPart::decoder)) total += tensor->numel();
  }
  return total;
}

std::size_t resolve_decoder_depth(const DtsConfig& config) {
  config.validate();
  const double enc = static_cast<double>(param_count(config, 0, ModelPart::encoder));
  auto ratio_for = [&](std::size_t depth) {
    return static_cast<double>(param_count(config, depth, ModelPart::decoder)) / enc;
  };
  auto in_window = [](double r) { return r >= kMinDecoderRatio && r <= kMaxDecoderRatio; };
  if (config.decoder_depth) {
    if (in_window(ratio_for(*config.decoder_depth))) return *config.decoder_depth;
  } else {
    std::size_t best = 0;
    double best_gap = 1e300;
    for (std::size_t depth = 1; depth <= config.encoder_depth; ++depth) {
      const double r = ratio_for(depth);
      if (in_window(r) && std::abs(r - 0.5) < best_gap) {
        best = depth;
        best_gap = std::abs(r - 0.5);
      }
    }
    if (best) return best;
  }
  std::ostringstream msg;
  msg << "dts: no decoder depth gives a decoder/encoder parameter ratio in [" << kMinDecoderRatio << ", "
      << kMaxDecoderRatio << "]";
  if (config.decoder_depth) msg << " (requested depth " << *config.decoder_depth << ")";
  msg << "; achievable ratios:";
  for (std::size_t depth = 1; depth <= config.encoder_depth + 1; ++depth) {
    msg << " L_d=" << depth << "->" << ratio_for(depth);
  }
  throw ConfigError(msg.str());
}

namespace {

Tensor uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

AttentionParams init_attention(std::size_t d, Rng& rng) {
  AttentionParams p;
  p.wq = uniform_init({d, d}, d, rng);
  p.bq = Tensor({d}, 0.0);
  p.wk = uniform_init({d, d}, d, rng);
  p.bk = Tensor({d}, 0.0);
  p.wv = uniform_init({d, d}, d, rng);
  p.bv = Tensor({d}, 0.0);
  p.wo = uniform_init({d, d}, d, rng);
  p.bo = Tensor({d}, 0.0);
  return p;
}

BlockParams init_block(std::size_t d, std::size_t mlp_ratio, Rng& rng) {
  BlockParams b;
  b.norm1_gamma = Tensor({d}, 1.0);
  b.norm1_beta = Tensor({d}, 0.0);
  b.spatial = init_attention(d, rng);
  b.norm2_gamma = Tensor({d}, 1.0);
  b.norm2_beta = Tensor({d}, 0.0);
  b.temporal = init_attention(d, rng);
  b.norm3_gamma = Tensor({d}, 1.0);
  b.norm3_beta = Tensor({d}, 0.0);
  const std::size_t h = mlp_ratio * d;
  b.mlp_w1 = uniform_init({d, h}, d, rng);
  b.mlp_b1 = Tensor({h}, 0.0);
  b.mlp_w2 = uniform_init({h, d}, h, rng);
  b.mlp_b2 = Tensor({d}, 0.0);
  return b;
}

template <typename Block, typename Out>
void append_block(const std::string& prefix, Block& b, Out& out) {
  auto attn = [&](const std::string& name, auto& a) {
    out.emplace_back(prefix + name + ".wq", &a.wq);
    out.emplace_back(prefix + name + ".bq", &a.bq);
    out.emplace_back(prefix + name + ".wk", &a.wk);
    out.emplace_back(prefix + name + ".bk", &a.bk);
    out.emplace_back(prefix + name + ".wv", &a.wv);
    out.emplace_back(prefix + name + ".bv", &a.bv);
    out.emplace_back(prefix + name + ".wo", &a.wo);
    out.emplace_back(prefix + name + ".bo", &a.bo);
  };
  out.emplace_back(prefix + "norm1.gamma", &b.norm1_gamma);
  out.emplace_back(prefix + "norm1.beta", &b.norm1_beta);
  attn("spatial", b.spatial);
  out.emplace_back(prefix + "norm2.gamma", &b.norm2_gamma);
  out.emplace_back(prefix + "norm2.beta", &b.norm2_beta);
  attn("temporal", b.temporal);
  out.emplace_back(prefix + "norm3.gamma", &b.norm3_gamma);
  out.emplace_back(prefix + "norm3.beta", &b.norm3_beta);
  out.emplace_back(prefix + "mlp.w1", &b.mlp_w1);
  out.emplace_back(prefix + "mlp.b1", &b.mlp_b1);
  out.emplace_back(prefix + "mlp.w2", &b.mlp_w2);
  out.emplace_back(prefix + "mlp.b2", &b.mlp_b2);
}

template <typename Model, typename Out>
void collect_parameters(Model& m, Out& out) {
  for (std::size_t i = 0; i < m.encoder.size(); ++i) {
    append_block("encoder." + std::to_string(i) + ".", m.encoder[i], out);
  }
  out.emplace_back("merge.kernel", &m.merge_kernel);
  out.emplace_back("merge.bias", &m.merge_bias);
  out.emplace_back("mask_token", &m.mask_token);
  for (std::size_t i = 0; i < m.decoder.size(); ++i) {
    append_block("decoder." + std::to_string(i) + ".", m.decoder[i], out);
  }
  out.emplace_back("head.weight", &m.head_weight);
  out.emplace_back("head.bias", &m.head_bias);
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> DtsModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_parameters(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> DtsModel::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect_parameters(*this, out);
  return out;
}

DtsModel init_dts(DtsConfig config, std::uint64_t seed) {
  config.decoder_depth = resolve_decoder_depth(config);
  const std::size_t d = config.dim;
  Rng rng(seed);
  DtsModel m;
  m.config = config;
  for (std::size_t i = 0; i < config.encoder_depth; ++i) m.encoder.push_back(init_block(d, config.mlp_ratio, rng));
  m.merge_kernel = uniform_init({config.ratio, 1, 1, d, d}, config.ratio * d, rng);
  m.merge_bias = Tensor({d}, 0.0);
  m.mask_token = uniform_init({d}, 1, rng);
  for (std::size_t i = 0; i < *config.decoder_depth; ++i) m.decoder.push_back(init_block(d, config.mlp_ratio, rng));
  m.head_weight = uniform_init({d, d}, d, rng);
  m.head_bias = Tensor({d}, 0.0);
  return m;
}

std::pair<std::size_t, std::size_t> token_grid_layout(std::size_t n) {
  std::size_t rows = 1;
  for (std::size_t r = 1; r * r <= n; ++r) {
    if (n % r == 0) rows = r;
  }
  return {rows, n / rows};
}

double CompressedGrid::tokens_per_source_frame() const {
  return static_cast<double>(tokens.dim(1)) / static_cast<double>(ratio);
}

std::size_t merged_frame_count(std::size_t frames, std::size_t ratio) { return (frames + ratio - 1) / ratio; }

std::vector<std::pair<std::size_t, std::size_t>> merge_windows(std::size_t frames, std::size_t ratio) {
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t s = 0; s < merged_frame_count(frames, ratio); ++s) {
    windows.emplace_back(s * ratio, std::min((s + 1) * ratio, frames));
  }
  return windows;
}

Var attention(Var x, const AttentionParams& p, std::size_t heads, ParamBinder& bind) {
  const Shape shape = x.shape();  // [B x L x D]
  const std::size_t batch = shape[0], len = shape[1], d = shape[2];
  const std::size_t dh = d / heads;
  Var flat = reshape(x, {batch * len, d});
  auto split_heads = [&](const Tensor& w, const Tensor& b) {
    Var y = add_lastdim(matmul(flat, bind(w)), bind(b));
    y = permute(reshape(y, {batch, len, heads, dh}), {0, 2, 1, 3});
    return reshape(y, {batch * heads, len, dh});
  };
  Var q = split_heads(p.wq, p.bq);
  Var k = split_heads(p.wk, p.bk);
  Var v = split_heads(p.wv, p.bv);
  Var scores = scale(batched_matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var mixed = batched_matmul(softmax_lastdim(scores), v);  // [B*h x L x dh]
  mixed = reshape(permute(reshape(mixed, {batch, heads, len, dh}), {0, 2, 1, 3}), {batch * len, d});
  Var out = add_lastdim(matmul(mixed, bind(p.wo)), bind(p.bo));
  return reshape(out, {batch, len, d});
}

Var st_block(Var x, const BlockParams& p, std::size_t heads, ParamBinder& bind) {
  const Shape shape = x.shape();  // [T x N x D]
  if (shape.size() != 3) throw DimensionError("st_block: expected [T x N x D], got " + shape_string(shape));
  const std::size_t t = shape[0], n = shape[1], d = shape[2];
  if (p.norm1_gamma.dim(0) != d) throw DimensionError("st_block: token dim does not match block parameters");

  // Spatial: attend over the N tokens of each frame.
  Var h = layer_norm(x, bind(p.norm1_gamma), bind(p.norm1_beta));
  x = add(x, attention(h, p.spatial, heads, bind));

  // Temporal: attend over the T frames at each token position.
  h = layer_norm(x, bind(p.norm2_gamma), bind(p.norm2_beta));
  Var temporal = attention(permute(h, {1, 0, 2}), p.temporal, heads, bind);
  x = add(x, permute(temporal, {1, 0, 2}));

  h = reshape(layer_norm(x, bind(p.norm3_gamma), bind(p.norm3_beta)), {t * n, d});
  Var m = add_lastdim(matmul(gelu(add_lastdim(matmul(h, bind(p.mlp_w1)), bind(p.mlp_b1))), bind(p.mlp_w2)),
                      bind(p.mlp_b2));
  return add(x, reshape(m, {t, n, d}));
}

Var temporal_merge(Var x, const DtsModel& model, ParamBinder& bind) {
  const Shape shape = x.shape();
  const std::size_t t = shape[0], n = shape[1], d = shape[2];
  const std::size_t r = model.config.ratio;
  const std::size_t merged = merged_frame_count(t, r);
  // Pad the trailing partial window by repeating the last frame.
  std::vector<std::size_t> frames(merged * r);
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = std::min(i, t - 1);
  Var padded = frames.size() == t ? x : select_frames(x, frames);
  const auto [rows, cols] = token_grid_layout(n);
  Var grid = reshape(padded, {merged * r, rows, cols, d});
  Var out = add_lastdim(conv3d(grid, bind(model.merge_kernel), {r, 1, 1}), bind(model.merge_bias));
  return reshape(out, {merged, n, d});
}

namespace {

void check_tokens(const Shape& shape, const DtsConfig& config, const char* where) {
  if (shape.size() != 3 || shape[1] != config.tokens_per_frame || shape[2] != config.dim) {
    throw DimensionError(std::string(where) + ": tokens " + shape_string(shape) + " do not match model (N=" +
                         std::to_string(config.tokens_per_frame) + ", D=" + std::to_string(config.dim) + ")");
  }
}

}  // namespace

Var dts_encode(Var tokens, const DtsModel& model, const MaskPlan* mask, ParamBinder& bind) {
  check_tokens(tokens.shape(), model.config, "dts_encode");
  Var x = tokens;
  if (mask) {
    if (mask->frames != tokens.shape()[0] || mask->tokens_per_frame != tokens.shape()[1] ||
        mask->mask.size() != mask->frames * mask->tokens_per_frame) {
      throw DimensionError("dts_encode: mask plan " + std::to_string(mask->frames) + "x" +
                           std::to_string(mask->tokens_per_frame) + " does not match tokens " +
                           shape_string(tokens.shape()));
    }
    x = mask_fill(x, mask->mask, bind(model.mask_token));
  }
  for (const BlockParams& block : model.encoder) x = st_block(x, block, model.config.heads, bind);
  return temporal_merge(x, model, bind);
}

Var dts_decode(Var compressed, const DtsModel& model, std::size_t target_frames, ParamBinder& bind) {
  check_tokens(compressed.shape(), model.config, "dts_decode");
  const std::size_t r = model.config.ratio;
  if (target_frames == 0 || merged_frame_count(target_frames, r) != compressed.shape()[0]) {
    throw DimensionError("dts_decode: " + std::to_string(compressed.shape()[0]) + " merged frames at ratio " +
                         std::to_string(r) + " cannot expand to " + std::to_string(target_frames) + " frames");
  }
  std::vector<std::size_t> source(target_frames);
  for (std::size_t t = 0; t < target_frames; ++t) source[t] = t / r;
  Var x = select_frames(compressed, source);
  for (const BlockParams& block : model.decoder) x = st_block(x, block, model.config.heads, bind);
  const std::size_t n = model.config.tokens_per_frame, d = model.config.dim;
  Var flat = reshape(x, {target_frames * n, d});
  Var out = add_lastdim(matmul(flat, bind(model.head_weight)), bind(model.head_bias));
  return reshape(out, {target_frames, n, d});
}

CompressedGrid dts_forward(const FrameTokenGrid& grid, const DtsModel& model, const MaskPlan* mask) {
  Tape tape;
  ParamBinder bind(tape, false);
  Var out = dts_encode(tape.constant(grid.tokens), model, mask, bind);
  CompressedGrid c;
  c.tokens = out.value();
  c.source_frames = grid.frames();
  c.ratio = model.config.ratio;
  c.windows = merge_windows(grid.frames(), c.ratio);
  return c;
}

Tensor decoder_forward(const CompressedGrid& compressed, const DtsModel& model, std::size_t target_frames) {
  if (compressed.ratio != model.config.ratio) {
    throw DimensionError("decoder_forward: grid compressed at ratio " + std::to_string(compressed.ratio) +
                         ", model ratio " + std::to_string(model.config.ratio));
  }
  if (compressed.source_frames != 0 && compressed.source_frames != target_frames) {
    throw DimensionError("decoder_forward: grid covers " + std::to_string(compressed.source_frames) +
                         " frames, asked for " + std::to_string(target_frames));
  }
  Tape tape;
  ParamBinder bind(tape, false);
  return dts_decode(tape.constant(compressed.tokens), model, target_frames, bind).value();
}

}  // namespace recot
