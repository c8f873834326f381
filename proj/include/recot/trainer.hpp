#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "recot/config_file.hpp"
#include "recot/dts.hpp"
#include "recot/encoder.hpp"
#include "recot/optim.hpp"
#include "recot/rng.hpp"
#include "recot/sgm.hpp"

namespace recot {

enum class MaskingPolicy { sgm, random, none };

std::string to_string(MaskingPolicy policy);
MaskingPolicy parse_masking_policy(const std::string& text);

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  double warmup_ratio = 0.03;
  double mask_ratio = 0.5;
  double aux_weight = 0.1;
  std::uint64_t seed = 0;
  MaskingPolicy masking = MaskingPolicy::sgm;
  bool masked_only_loss = false;
  AdamConfig adam;
  DtsConfig dts;

  void validate() const;
  // Reads every key this struct knows; leaves the rest for the caller.
  void read(ConfigReader& reader);
  KeyValues to_key_values() const;
};

// Everything a training run owns. Parameters, moments and the rng together
// determine the rest of the run.
struct TrainState {
  TrainConfig config;
  DtsModel model;
  SgmParams sgm;
  AdamState adam;
  std::size_t step = 0;
  Rng rng;

  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
};

TrainState init_train_state(const TrainConfig& config);

// Discrete per-sample choices the loss depends on; fixed before the forward
// pass so the loss is a smooth function of the parameters.
struct SamplePlan {
  std::size_t clip = 0;
  std::optional<MaskPlan> mask;
  // Empty: computed from this forward's reconstruction errors.
  std::vector<std::uint8_t> hard;
};

struct LossParts {
  Var total;
  double reconstruction = 0.0;
  double aux = 0.0;
  std::vector<SamplePlan> plans;  // with the splits actually used
  std::vector<double> per_sample;
};

// Builds the batch loss on `bind`'s tape: mean over samples (in plan order)
// of reconstruction MSE plus aux_weight times the SGM auxiliary loss.
LossParts build_loss(const std::vector<FrameTokenGrid>& corpus, std::vector<SamplePlan> plans, const TrainState& state,
                     ParamBinder& bind);

// Mask plans for a batch of clip indices (sorted internally).
std::vector<SamplePlan> plan_batch(const std::vector<FrameTokenGrid>& corpus, std::vector<std::size_t> clips,
                                   const TrainState& state, std::uint64_t mask_seed);

struct StepResult {
  std::size_t step = 0;  // 1-based index of the update just applied
  double loss = 0.0;
  double reconstruction = 0.0;
  double aux = 0.0;
  double lr = 0.0;
};

// Samples a batch, runs forward/backward and applies one Adam update.
// Throws NumericError naming the offending batch element on a non-finite loss.
StepResult recot_step(TrainState& state, const std::vector<FrameTokenGrid>& corpus);

using StepCallback = std::function<void(const StepResult&, const TrainState&)>;
// Runs steps until state.step == config.steps.
void train(TrainState& state, const std::vector<FrameTokenGrid>& corpus, const StepCallback& on_step = {});

// Unmasked reconstruction MSE averaged over clips.
double reconstruction_mse(const std::vector<FrameTokenGrid>& corpus, const DtsModel& model);

// ---- checkpoints ------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Model-only view for evaluation; accepts any checkpoint written above.
DtsModel load_model(const std::filesystem::path& path);

// ---- gradient verification ------------------------------------------------

struct GradcheckConfig {
  TrainConfig train;
  std::size_t frames = 4;
  std::size_t clips = 2;
  double step = 1e-5;
  double tolerance = 1e-4;

  static GradcheckConfig tiny();
};

struct GradcheckReport {
  std::map<std::string, double> group_error;  // parameter group -> max relative error
  std::string worst_parameter;
  double worst_error = 0.0;
  std::size_t checked = 0;

  bool passed(double tolerance) const { return worst_error <= tolerance; }
};

// Compares analytic gradients of the full training loss with central
// differences on every trainable scalar.
GradcheckReport gradient_check(const GradcheckConfig& config);

}  // namespace recot
