#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "recot/tensor.hpp"

namespace recot {

enum class TaskType { caption, multiple_choice, open_ended };

std::string to_string(TaskType task);
TaskType parse_task_type(const std::string& text);

struct EmbeddingClip {
  std::string id;
  TaskType task = TaskType::caption;
  double duration_s = 0.0;
  Tensor embeddings;               // [F x D]
  std::vector<double> timestamps;  // [F], seconds

  std::size_t frames() const { return embeddings.dim(0); }
  void validate() const;
};

inline constexpr std::size_t kRedundancySamples = 20;

// Frame indices (in timestamp order) of a stratified sample of
// min(20, F) frames: one uniform draw from each of k equal index strata.
std::vector<std::size_t> sample_frames(const EmbeddingClip& clip, std::uint64_t seed);

// Mean pairwise cosine similarity between the sampled frames.
double redundancy_score(const EmbeddingClip& clip, std::uint64_t seed);

struct PruneRecord {
  std::string id;
  TaskType task = TaskType::caption;
  double score = 0.0;
  bool kept = false;
};

struct SubsetStats {
  std::size_t total = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

struct PruneFailure {
  std::string file;
  std::string message;
};

struct PruningManifest {
  std::vector<PruneRecord> records;  // sorted by clip id
  double threshold = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, SubsetStats> subsets;  // keyed by task name
  std::vector<PruneFailure> failures;

  std::size_t kept() const;
  std::size_t dropped() const;
};

inline constexpr const char* kManifestSchema = "recot.prune/1";

// Drops clips whose redundancy score is >= threshold, per task subset.
PruningManifest prune_dataset(const std::vector<EmbeddingClip>& clips, double threshold, std::uint64_t seed);

// One JSON record per clip, then a summary record.
std::string manifest_jsonl(const PruningManifest& manifest);

// A clip directory holds <id>.emb tensor files plus metadata.jsonl with one
// {"id", "task", "duration_s", "file"} object per clip.
inline constexpr const char* kMetadataFile = "metadata.jsonl";

void write_clip(const std::filesystem::path& dir, const EmbeddingClip& clip);

struct ClipDirectory {
  std::vector<EmbeddingClip> clips;
  std::vector<PruneFailure> failures;
};

// Unreadable clip files are reported in `failures`; a missing or malformed
// metadata file throws.
ClipDirectory read_clip_directory(const std::filesystem::path& dir);

enum class SamplingMode { training, finetune };

struct SamplingConfig {
  double short_threshold_s = 60.0;
  std::vector<double> short_fps = {2.0, 3.0};
  std::size_t training_cap = 360;
  std::size_t finetune_cap = 240;
};

struct SamplingPlan {
  SamplingMode mode = SamplingMode::training;
  double fps = 1.0;
  std::vector<double> timestamps;
};

// Indices floor(i * n / cap) for i < cap; identity when n <= cap.
std::vector<std::size_t> uniform_subsample(std::size_t n, std::size_t cap);

SamplingPlan variable_sampling_plan(double duration_s, SamplingMode mode, std::uint64_t seed,
                                    const SamplingConfig& config = {});

}  // namespace recot
