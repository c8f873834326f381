#include "recot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "recot/container.hpp"
#include "recot/errors.hpp"

namespace recot {

std::string to_string(MaskingPolicy policy) {
  switch (policy) {
    case MaskingPolicy::sgm: return "sgm";
    case MaskingPolicy::random: return "random";
    case MaskingPolicy::none: return "none";
  }
  return "?";
}

MaskingPolicy parse_masking_policy(const std::string& text) {
  if (text == "sgm") return MaskingPolicy::sgm;
  if (text == "random") return MaskingPolicy::random;
  if (text == "none") return MaskingPolicy::none;
  throw ConfigError("masking: expected sgm, random or none, got '" + text + "'");
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("steps must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive, got " + format_double(learning_rate));
  }
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("warmup_ratio must lie in [0, 1), got " + format_double(warmup_ratio));
  }
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw ConfigError("mask_ratio must lie in [0, 1), got " + format_double(mask_ratio));
  }
  if (!(aux_weight >= 0.0) || !std::isfinite(aux_weight)) throw ConfigError("aux_weight must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.eps > 0.0)) {
    throw ConfigError("adam: betas must lie in [0, 1) and eps must be positive");
  }
  resolve_decoder_depth(dts);
}

void TrainConfig::read(ConfigReader& r) {
  r.read("steps", steps);
  r.read("batch_size", batch_size);
  r.read("learning_rate", learning_rate);
  r.read("warmup_ratio", warmup_ratio);
  r.read("mask_ratio", mask_ratio);
  r.read("aux_weight", aux_weight);
  r.read("seed", seed);
  if (auto m = r.get_string("masking")) masking = parse_masking_policy(*m);
  if (auto p = r.get_string("loss_positions")) {
    if (*p != "all" && *p != "masked") throw ConfigError("loss_positions: expected all or masked, got '" + *p + "'");
    masked_only_loss = *p == "masked";
  }
  r.read("adam_beta1", adam.beta1);
  r.read("adam_beta2", adam.beta2);
  r.read("adam_eps", adam.eps);
  r.read("dim", dts.dim);
  r.read("heads", dts.heads);
  r.read("encoder_depth", dts.encoder_depth);
  if (auto d = r.get_u64("decoder_depth")) dts.decoder_depth = *d;
  r.read("ratio", dts.ratio);
  r.read("tokens_per_frame", dts.tokens_per_frame);
  r.read("mlp_ratio", dts.mlp_ratio);
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv{
      {"steps", std::to_string(steps)},
      {"batch_size", std::to_string(batch_size)},
      {"learning_rate", format_double(learning_rate)},
      {"warmup_ratio", format_double(warmup_ratio)},
      {"mask_ratio", format_double(mask_ratio)},
      {"aux_weight", format_double(aux_weight)},
      {"seed", std::to_string(seed)},
      {"masking", to_string(masking)},
      {"loss_positions", masked_only_loss ? "masked" : "all"},
      {"adam_beta1", format_double(adam.beta1)},
      {"adam_beta2", format_double(adam.beta2)},
      {"adam_eps", format_double(adam.eps)},
      {"dim", std::to_string(dts.dim)},
      {"heads", std::to_string(dts.heads)},
      {"encoder_depth", std::to_string(dts.encoder_depth)},
  };
  if (dts.decoder_depth) kv.emplace_back("decoder_depth", std::to_string(*dts.decoder_depth));
  kv.emplace_back("ratio", std::to_string(dts.ratio));
  kv.emplace_back("tokens_per_frame", std::to_string(dts.tokens_per_frame));
  kv.emplace_back("mlp_ratio", std::to_string(dts.mlp_ratio));
  return kv;
}

std::vector<std::pair<std::string, Tensor*>> TrainState::parameters() {
  auto out = model.parameters();
  out.emplace_back("sgm.temp_query", &sgm.temp_query);
  out.emplace_back("sgm.spatio_query", &sgm.spatio_query);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> TrainState::parameters() const {
  auto out = model.parameters();
  out.emplace_back("sgm.temp_query", &sgm.temp_query);
  out.emplace_back("sgm.spatio_query", &sgm.spatio_query);
  return out;
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.model = init_dts(config.dts, mix_seed(config.seed, 1));
  s.config.dts.decoder_depth = s.model.config.decoder_depth;
  s.sgm = init_sgm(config.dts.dim);
  std::vector<const Tensor*> params;
  for (const auto& [name, t] : std::as_const(s).parameters()) params.push_back(t);
  s.adam = AdamState::zeros_like(params);
  s.rng = Rng(mix_seed(config.seed, 2));
  return s;
}

std::vector<SamplePlan> plan_batch(const std::vector<FrameTokenGrid>& corpus, std::vector<std::size_t> clips,
                                   const TrainState& state, std::uint64_t mask_seed) {
  std::sort(clips.begin(), clips.end());
  std::vector<SamplePlan> plans;
  const TrainConfig& cfg = state.config;
  for (std::size_t clip : clips) {
    const FrameTokenGrid& grid = corpus.at(clip);
    SamplePlan plan;
    plan.clip = clip;
    const std::uint64_t seed = mix_seed(mask_seed, clip);
    if (cfg.masking == MaskingPolicy::sgm) {
      plan.mask = make_mask_plan(sgm_scores(grid, state.sgm), cfg.mask_ratio, seed);
    } else if (cfg.masking == MaskingPolicy::random) {
      plan.mask = random_mask_plan(grid.frames(), grid.tokens_per_frame(), cfg.mask_ratio, seed);
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

namespace {

std::vector<double> token_errors(const Tensor& recon, const Tensor& target) {
  const std::size_t d = target.dim(2);
  std::vector<double> errors(target.numel() / d);
  for (std::size_t row = 0; row < errors.size(); ++row) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = recon[row * d + k] - target[row * d + k];
      acc += diff * diff;
    }
    errors[row] = acc / static_cast<double>(d);
  }
  return errors;
}

Var masked_mse(Var recon, Var target, const MaskPlan& mask) {
  const Shape shape = target.shape();
  const std::size_t d = shape[2];
  const double count = static_cast<double>(mask.masked_count() * d);
  Tensor weights(shape, 0.0);
  for (std::size_t row = 0; row < mask.mask.size(); ++row) {
    if (!mask.mask[row]) continue;
    for (std::size_t k = 0; k < d; ++k) weights[row * d + k] = 1.0 / count;
  }
  Var diff = sub(recon, target);
  return sum(mul(mul(diff, diff), recon.tape()->constant(std::move(weights))));
}

}  // namespace

LossParts build_loss(const std::vector<FrameTokenGrid>& corpus, std::vector<SamplePlan> plans, const TrainState& state,
                     ParamBinder& bind) {
  if (plans.empty()) throw UsageError("build_loss: empty batch");
  const TrainConfig& cfg = state.config;
  Tape& tape = bind.tape();
  LossParts parts;
  Var total;
  const std::size_t n = corpus.at(plans.front().clip).tokens_per_frame();
  const std::size_t d = corpus.at(plans.front().clip).dim();
  for (std::size_t j = 0; j < plans.size(); ++j) {
    SamplePlan& plan = plans[j];
    const FrameTokenGrid& grid = corpus.at(plan.clip);
    if (grid.tokens_per_frame() != n || grid.dim() != d) {
      throw DimensionError("build_loss: clip " + std::to_string(plan.clip) + " has shape " +
                           shape_string(grid.tokens.shape()) + ", batch expects N=" + std::to_string(n) +
                           ", D=" + std::to_string(d));
    }
    Var loss;
    try {
      Var target = tape.constant(grid.tokens);
      const MaskPlan* mask = plan.mask ? &*plan.mask : nullptr;
      Var recon = dts_decode(dts_encode(target, state.model, mask, bind), state.model, grid.frames(), bind);
      loss = cfg.masked_only_loss && mask && mask->masked_count() > 0 ? masked_mse(recon, target, *mask)
                                                                      : mse(recon, target);
      parts.reconstruction += loss.value().item();
      if (cfg.masking == MaskingPolicy::sgm && cfg.aux_weight > 0.0) {
        if (plan.hard.empty()) plan.hard = difficulty_split(token_errors(recon.value(), grid.tokens), cfg.mask_ratio);
        if (!plan.hard.empty()) {
          Var aux = sgm_aux_loss(sgm_score_graph(target, state.sgm, bind).scores, plan.hard);
          parts.aux += aux.value().item();
          loss = add(loss, scale(aux, cfg.aux_weight));
        }
      }
    } catch (const NumericError& e) {
      throw NumericError("batch element " + std::to_string(j) + " (clip " + std::to_string(plan.clip) +
                         "): " + e.what());
    }
    parts.per_sample.push_back(loss.value().item());
    total = total.valid() ? add(total, loss) : loss;
  }
  const double inv = 1.0 / static_cast<double>(plans.size());
  parts.total = scale(total, inv);
  parts.reconstruction *= inv;
  parts.aux *= inv;
  parts.plans = std::move(plans);
  return parts;
}

StepResult recot_step(TrainState& state, const std::vector<FrameTokenGrid>& corpus) {
  if (corpus.empty()) throw UsageError("recot_step: empty corpus");
  const TrainConfig& cfg = state.config;
  if (state.step >= cfg.steps) throw UsageError("recot_step: training already finished");
  std::vector<std::size_t> clips =
      state.rng.sample_without_replacement(corpus.size(), std::min(cfg.batch_size, corpus.size()));
  const std::uint64_t mask_seed = state.rng.next_u64();
  std::vector<SamplePlan> plans = plan_batch(corpus, std::move(clips), state, mask_seed);

  Tape tape;
  ParamBinder bind(tape, true);
  LossParts parts = build_loss(corpus, std::move(plans), state, bind);
  for (std::size_t j = 0; j < parts.per_sample.size(); ++j) {
    if (!std::isfinite(parts.per_sample[j])) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << state.step + 1 << ", batch element " << j << " (clip "
          << parts.plans[j].clip << ", loss " << parts.per_sample[j] << ")";
      throw NumericError(msg.str());
    }
  }
  tape.backward(parts.total);

  auto params = state.parameters();
  std::vector<Tensor*> targets;
  std::vector<Tensor> grads;
  for (auto& [name, t] : params) {
    targets.push_back(t);
    grads.push_back(bind.grad(*t));
  }
  const double lr = lr_at(state.step + 1, cfg.steps, cfg.learning_rate, cfg.warmup_ratio);
  adam_update(targets, grads, state.adam, lr, cfg.adam);
  state.step += 1;
  return {state.step, parts.total.value().item(), parts.reconstruction, parts.aux, lr};
}

void train(TrainState& state, const std::vector<FrameTokenGrid>& corpus, const StepCallback& on_step) {
  while (state.step < state.config.steps) {
    StepResult r = recot_step(state, corpus);
    if (on_step) on_step(r, state);
  }
}

double reconstruction_mse(const std::vector<FrameTokenGrid>& corpus, const DtsModel& model) {
  if (corpus.empty()) throw UsageError("reconstruction_mse: empty corpus");
  double total = 0.0;
  for (const FrameTokenGrid& grid : corpus) {
    Tape tape;
    ParamBinder bind(tape, false);
    Var target = tape.constant(grid.tokens);
    Var recon = dts_decode(dts_encode(target, model, nullptr, bind), model, grid.frames(), bind);
    total += mse(recon, target).value().item();
  }
  return total / static_cast<double>(corpus.size());
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr const char* kStateKind = "train_state";

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (src.shape() != dst.shape()) {
    throw FormatError(FormatError::Kind::malformed, "checkpoint tensor '" + name + "' has shape " +
                                                        shape_string(src.shape()) + ", config implies " +
                                                        shape_string(dst.shape()));
  }
  dst = src;
}

}  // namespace

namespace {

Container checkpoint_container(const TrainState& state) {
  Container c;
  c.config = state.config.to_key_values();
  c.config.emplace_back("kind", kStateKind);
  c.config.emplace_back("step", std::to_string(state.step));
  c.config.emplace_back("adam_step", std::to_string(state.adam.step));
  c.config.emplace_back("rng_state", state.rng.serialize());
  const auto params = state.parameters();
  for (const auto& [name, t] : params) c.tensors.push_back({name, *t});
  for (std::size_t k = 0; k < params.size(); ++k) c.tensors.push_back({"adam.m." + params[k].first, state.adam.m[k]});
  for (std::size_t k = 0; k < params.size(); ++k) c.tensors.push_back({"adam.v." + params[k].first, state.adam.v[k]});
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state) {
  return encode_container(checkpoint_container(state));
}

namespace {

TrainState state_from_container(const Container& c) {
  ConfigReader reader(c.config);
  TrainConfig cfg;
  std::uint64_t step = 0, adam_step = 0;
  std::string rng_state, kind;
  try {
    cfg.read(reader);
    reader.read("step", step);
    reader.read("adam_step", adam_step);
    reader.read("rng_state", rng_state);
    reader.read("kind", kind);
    reader.finish();
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::malformed, std::string("checkpoint config: ") + e.what());
  }
  if (kind != kStateKind) throw FormatError(FormatError::Kind::malformed, "not a training checkpoint");
  TrainState s = init_train_state(cfg);
  s.step = step;
  s.adam.step = adam_step;
  s.rng = Rng::deserialize(rng_state);
  auto params = s.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string& name = params[k].first;
    copy_into(*params[k].second, c.tensor(name), name);
    copy_into(s.adam.m[k], c.tensor("adam.m." + name), "adam.m." + name);
    copy_into(s.adam.v[k], c.tensor("adam.v." + name), "adam.v." + name);
  }
  if (c.tensors.size() != 3 * params.size()) {
    throw FormatError(FormatError::Kind::malformed, "checkpoint holds " + std::to_string(c.tensors.size()) +
                                                        " tensors, expected " + std::to_string(3 * params.size()));
  }
  return s;
}

}  // namespace

TrainState decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  return state_from_container(decode_container(bytes));
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  write_container(path, checkpoint_container(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return state_from_container(read_container(path)); }

DtsModel load_model(const std::filesystem::path& path) { return load_checkpoint(path).model; }

// ---- gradient verification ------------------------------------------------

GradcheckConfig GradcheckConfig::tiny() {
  GradcheckConfig g;
  g.train.dts.dim = 8;
  g.train.dts.heads = 2;
  g.train.dts.encoder_depth = 2;
  g.train.dts.ratio = 2;
  g.train.dts.tokens_per_frame = 4;
  g.train.mask_ratio = 0.25;
  g.train.aux_weight = 0.1;
  g.train.masking = MaskingPolicy::sgm;
  g.train.steps = 1;
  g.train.batch_size = 2;
  return g;
}

namespace {

std::string parameter_group(const std::string& name) {
  const std::size_t first = name.find('.');
  if (first == std::string::npos) return name;
  const std::string head = name.substr(0, first);
  if (head == "encoder" || head == "decoder") return name.substr(0, name.find('.', first + 1));
  return head;
}

}  // namespace

GradcheckReport gradient_check(const GradcheckConfig& config) {
  TrainState state = init_train_state(config.train);
  Rng rng(mix_seed(config.train.seed, 77));
  // Move off the symmetric initialization (unit gains, zero biases, identity queries).
  for (auto& [name, t] : state.parameters()) {
    for (double& v : t->values()) v += rng.uniform(-0.1, 0.1);
  }
  const std::size_t n = config.train.dts.tokens_per_frame, d = config.train.dts.dim;
  std::vector<FrameTokenGrid> corpus;
  for (std::size_t c = 0; c < config.clips; ++c) {
    Tensor tokens({config.frames, n, d});
    for (double& v : tokens.values()) v = rng.normal();
    corpus.emplace_back(std::move(tokens));
  }
  std::vector<std::size_t> clips(config.clips);
  for (std::size_t c = 0; c < clips.size(); ++c) clips[c] = c;

  std::vector<SamplePlan> plans = plan_batch(corpus, clips, state, rng.next_u64());
  Tape tape;
  ParamBinder bind(tape, true);
  LossParts parts = build_loss(corpus, std::move(plans), state, bind);
  tape.backward(parts.total);
  const std::vector<SamplePlan> fixed = parts.plans;

  auto loss_value = [&]() {
    Tape t;
    ParamBinder b(t, false);
    return build_loss(corpus, fixed, state, b).total.value().item();
  };

  GradcheckReport report;
  for (auto& [name, t] : state.parameters()) {
    const Tensor analytic = bind.grad(*t);
    double& group = report.group_error[parameter_group(name)];
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double saved = (*t)[i];
      (*t)[i] = saved + config.step;
      const double up = loss_value();
      (*t)[i] = saved - config.step;
      const double down = loss_value();
      (*t)[i] = saved;
      const double numeric = (up - down) / (2.0 * config.step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      group = std::max(group, err);
      if (err > report.worst_error || report.worst_parameter.empty()) {
        report.worst_error = std::max(err, report.worst_error);
        report.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace recot
