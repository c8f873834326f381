#include "recot/data_tools.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "recot/container.hpp"
#include "recot/errors.hpp"
#include "recot/parallel.hpp"
#include "recot/rng.hpp"

namespace recot {

std::string to_string(TaskType task) {
  switch (task) {
    case TaskType::caption: return "caption";
    case TaskType::multiple_choice: return "multiple-choice";
    case TaskType::open_ended: return "open-ended";
  }
  return "?";
}

TaskType parse_task_type(const std::string& text) {
  if (text == "caption") return TaskType::caption;
  if (text == "multiple-choice") return TaskType::multiple_choice;
  if (text == "open-ended") return TaskType::open_ended;
  throw ConfigError("unknown task type '" + text + "' (expected caption, multiple-choice or open-ended)");
}

void EmbeddingClip::validate() const {
  if (id.empty()) throw ConfigError("clip: empty id");
  if (embeddings.rank() != 2) {
    throw DimensionError("clip " + id + ": embeddings must be [F x D], got " + shape_string(embeddings.shape()));
  }
  if (timestamps.size() != embeddings.dim(0)) {
    throw DimensionError("clip " + id + ": " + std::to_string(timestamps.size()) + " timestamps for " +
                         std::to_string(embeddings.dim(0)) + " frames");
  }
  std::vector<double> sorted = timestamps;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (!std::isfinite(sorted[i]) || sorted[i] < 0.0) throw ConfigError("clip " + id + ": timestamps must be finite and >= 0");
    if (i > 0 && sorted[i] == sorted[i - 1]) throw ConfigError("clip " + id + ": duplicate timestamp");
  }
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) throw ConfigError("clip " + id + ": duration must be > 0");
}

namespace {

std::uint64_t hash_id(const std::string& id) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::vector<std::size_t> sample_frames(const EmbeddingClip& clip, std::uint64_t seed) {
  const std::size_t f = clip.frames();
  std::vector<std::size_t> by_time(f);
  std::iota(by_time.begin(), by_time.end(), 0);
  std::stable_sort(by_time.begin(), by_time.end(),
                   [&](std::size_t a, std::size_t b) { return clip.timestamps[a] < clip.timestamps[b]; });
  const std::size_t k = std::min(kRedundancySamples, f);
  Rng rng(mix_seed(seed, hash_id(clip.id)));
  std::vector<std::size_t> picked;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t lo = j * f / k, hi = (j + 1) * f / k;
    picked.push_back(by_time[lo + rng.below(hi - lo)]);
  }
  return picked;
}

double redundancy_score(const EmbeddingClip& clip, std::uint64_t seed) {
  if (clip.embeddings.rank() != 2 || clip.frames() < 2) {
    throw UsageError("redundancy_score: clip " + clip.id + " needs at least 2 frames");
  }
  clip.validate();
  const auto picked = sample_frames(clip, seed);
  const std::size_t d = clip.embeddings.dim(1);
  const auto data = clip.embeddings.values();
  auto row = [&](std::size_t i) { return data.subspan(i * d, d); };
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < picked.size(); ++a) {
    for (std::size_t b = a + 1; b < picked.size(); ++b) {
      total += cosine_similarity(row(picked[a]), row(picked[b]));
      ++pairs;
    }
  }
  return std::clamp(total / static_cast<double>(pairs), -1.0, 1.0);
}

std::size_t PruningManifest::kept() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.kept; }));
}

std::size_t PruningManifest::dropped() const { return records.size() - kept(); }

PruningManifest prune_dataset(const std::vector<EmbeddingClip>& clips, double threshold, std::uint64_t seed) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("threshold must lie in [0, 1], got " + std::to_string(threshold));
  }
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return clips[a].id < clips[b].id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (clips[order[i]].id == clips[order[i - 1]].id) throw ConfigError("duplicate clip id '" + clips[order[i]].id + "'");
  }

  PruningManifest m;
  m.threshold = threshold;
  m.seed = seed;
  m.records.resize(clips.size());
  parallel_for(order.size(), [&](std::size_t i) {
    const EmbeddingClip& clip = clips[order[i]];
    PruneRecord& r = m.records[i];
    r.id = clip.id;
    r.task = clip.task;
    r.score = redundancy_score(clip, seed);
    r.kept = r.score < threshold;
  });
  for (const PruneRecord& r : m.records) {
    SubsetStats& s = m.subsets[to_string(r.task)];
    ++s.total;
    ++(r.kept ? s.kept : s.dropped);
  }
  return m;
}

std::string manifest_jsonl(const PruningManifest& manifest) {
  std::ostringstream out;
  for (const PruneRecord& r : manifest.records) {
    nlohmann::ordered_json j;
    j["schema"] = kManifestSchema;
    j["type"] = "clip";
    j["id"] = r.id;
    j["task"] = to_string(r.task);
    j["score"] = r.score;
    j["kept"] = r.kept;
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json s;
  s["schema"] = kManifestSchema;
  s["type"] = "summary";
  s["threshold"] = manifest.threshold;
  s["seed"] = manifest.seed;
  s["clips"] = manifest.records.size();
  s["kept"] = manifest.kept();
  s["dropped"] = manifest.dropped();
  nlohmann::ordered_json subsets = nlohmann::ordered_json::object();
  for (const auto& [task, stats] : manifest.subsets) {
    subsets[task] = {{"total", stats.total}, {"kept", stats.kept}, {"dropped", stats.dropped}};
  }
  s["subsets"] = subsets;
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  for (const auto& f : manifest.failures) failures.push_back({{"file", f.file}, {"error", f.message}});
  s["failures"] = failures;
  out << s.dump() << '\n';
  return out.str();
}

void write_clip(const std::filesystem::path& dir, const EmbeddingClip& clip) {
  clip.validate();
  std::filesystem::create_directories(dir);
  const std::string file = clip.id + ".emb";
  Container c;
  c.config = {{"kind", "embedding_clip"}, {"id", clip.id}};
  c.tensors.push_back({"embeddings", clip.embeddings});
  c.tensors.push_back({"timestamps", Tensor({clip.timestamps.size()}, clip.timestamps)});
  write_container(dir / file, c);

  nlohmann::ordered_json j;
  j["id"] = clip.id;
  j["task"] = to_string(clip.task);
  j["duration_s"] = clip.duration_s;
  j["file"] = file;
  std::ofstream meta(dir / kMetadataFile, std::ios::app);
  if (!meta) throw FormatError(FormatError::Kind::io, "cannot append to " + (dir / kMetadataFile).string());
  meta << j.dump() << '\n';
}

ClipDirectory read_clip_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw FormatError(FormatError::Kind::io, "not a directory: " + dir.string());
  }
  ClipDirectory out;
  const auto meta_path = dir / kMetadataFile;
  if (!std::filesystem::exists(meta_path)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".emb") {
        throw FormatError(FormatError::Kind::io, "clip files present but " + meta_path.string() + " is missing");
      }
    }
    return out;
  }
  std::ifstream in(meta_path);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot read " + meta_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string file;
    try {
      const auto j = nlohmann::json::parse(line);
      file = j.at("file").get<std::string>();
      EmbeddingClip clip;
      clip.id = j.at("id").get<std::string>();
      clip.task = parse_task_type(j.at("task").get<std::string>());
      clip.duration_s = j.at("duration_s").get<double>();
      const Container c = read_container(dir / file);
      clip.embeddings = c.tensor("embeddings");
      const auto ts = c.tensor("timestamps").values();
      clip.timestamps.assign(ts.begin(), ts.end());
      clip.validate();
      if (clip.frames() < 2) throw UsageError("clip " + clip.id + " has fewer than 2 frames");
      out.clips.push_back(std::move(clip));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(meta_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception& e) {
      out.failures.push_back({file.empty() ? meta_path.string() + ":" + std::to_string(line_no) : file, e.what()});
    }
  }
  return out;
}

std::vector<std::size_t> uniform_subsample(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> idx;
  if (n <= cap) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  for (std::size_t i = 0; i < cap; ++i) idx.push_back(i * n / cap);
  return idx;
}

SamplingPlan variable_sampling_plan(double duration_s, SamplingMode mode, std::uint64_t seed,
                                    const SamplingConfig& config) {
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    throw ConfigError("duration must be positive, got " + std::to_string(duration_s));
  }
  if (config.short_fps.empty()) throw ConfigError("sampling: short_fps menu is empty");
  SamplingPlan plan;
  plan.mode = mode;
  std::size_t cap = config.finetune_cap;
  if (mode == SamplingMode::training) {
    cap = config.training_cap;
    if (duration_s < config.short_threshold_s) {
      Rng rng(mix_seed(seed, 31));
      plan.fps = config.short_fps[rng.below(config.short_fps.size())];
    }
  }
  std::vector<double> all;
  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) / plan.fps;
    if (!(t < duration_s)) break;
    all.push_back(t);
  }
  for (std::size_t i : uniform_subsample(all.size(), cap)) plan.timestamps.push_back(all[i]);
  return plan;
}

}  // namespace recot
