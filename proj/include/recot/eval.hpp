#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "recot/dts.hpp"
#include "recot/haystack.hpp"
#include "recot/selector.hpp"
#include "recot/trainer.hpp"

namespace recot {

struct EvalReport {
  std::string name;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, double>> metrics;
  // CSV table; for sweeps over two axes this is the heatmap grid.
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  double runtime_s = 0.0;  // wall clock, kept out of the written files

  double metric(const std::string& key) const;
  std::string json() const;
  std::string csv() const;
};

// Writes <dir>/<name>.json and <dir>/<name>.csv.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

std::string format_number(double v);

// Encoder -> optional DTS round trip -> optional query-aware selection.
struct NeedlePipeline {
  const DtsModel* dts = nullptr;
  const SelectorModel* selector = nullptr;
  double keep_rate = 1.0;
  double threshold = 0.8;  // cosine with the probe counted as retained
};

struct NeedleOutcome {
  bool retained = false;
  double best_cosine = -1.0;
  std::size_t kept = 0;
  std::size_t tokens = 0;
};

// Throws DimensionError when the pipeline's models do not fit the world.
void check_pipeline(const NeedlePipeline& pipeline, const HaystackWorld& world);

NeedleOutcome needle_retention(const Haystack& haystack, const std::string& query, const HaystackWorld& world,
                               const NeedlePipeline& pipeline);

struct NeedleSweepConfig {
  std::vector<std::size_t> frames = {16, 32, 64, 128, 256};
  std::vector<double> depths = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t seeds = 20;
  double noise = 0.05;
  std::uint64_t seed = 0;
};

std::size_t needle_frame_at(double depth, std::size_t frames);

EvalReport eval_needle(const HaystackWorld& world, const NeedleSweepConfig& sweep, const NeedlePipeline& pipeline);

// Retention over `trials` haystacks of `frames` frames with raw tokens.
double selector_retention(const HaystackWorld& world, const SelectorModel& selector, double keep_rate,
                          std::size_t trials, std::size_t frames, std::uint64_t seed);

EvalReport sweep_selector_rate(const HaystackWorld& world, const SelectorModel& selector,
                               const std::vector<double>& rates, std::size_t trials, std::size_t frames,
                               std::uint64_t seed);

// ---- linear probe -----------------------------------------------------------

struct ProbeConfig {
  std::size_t steps = 300;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

// Softmax regression (one linear layer plus bias) on rows of `train`;
// returns accuracy on `test`.
double linear_probe(const Tensor& train, const std::vector<int>& train_labels, const Tensor& test,
                    const std::vector<int>& test_labels, const ProbeConfig& config = {});

// Mean over all tokens: raw [T x N x D] grids, or DTS-compressed grids when a model is given.
Tensor pooled_features(const std::vector<LabeledClip>& clips, const DtsModel* model);

struct ProbeExperiment {
  std::size_t train_clips = 128;
  std::size_t test_clips = 512;
  std::size_t frames = 8;
  double shift = 1.0;
  bool shuffle_labels = false;
  std::uint64_t seed = 0;
  ProbeConfig probe;
};

struct ProbeResult {
  double raw = 0.0;
  std::optional<double> compressed;
};

ProbeResult run_probe(const HaystackWorld& world, const ProbeExperiment& experiment, const DtsModel* model);

// ---- SGM ablation -----------------------------------------------------------

struct AblationConfig {
  TrainConfig train;
  std::size_t clips = 32;
  std::size_t frames = 8;
  std::size_t background_tokens = 6;
  ProbeExperiment probe;
  std::uint64_t seed = 0;
};

struct MaskTargeting {
  double sgm_rate = 0.0;           // share of background tokens SGM masks
  double random_rate = 0.0;        // same for uniform random plans (empirical)
  double expected_random = 0.0;    // = mask ratio
};

MaskTargeting background_mask_rates(const std::vector<PlantedClip>& clips, const SgmParams& sgm, double ratio,
                                    std::uint64_t seed);

// Trains an SGM-masked and a random-masked model on the planted-redundancy
// corpus with identical settings; one report row per variant.
EvalReport ablate_sgm(const HaystackWorld& world, const AblationConfig& config);

}  // namespace recot
