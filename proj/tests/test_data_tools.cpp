#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "recot/container.hpp"
#include "recot/data_tools.hpp"
#include "recot/errors.hpp"
#include "test_support.hpp"

using namespace recot;
using recot::test::random_tensor;

namespace {

EmbeddingClip make_clip(std::string id, Tensor emb, TaskType task = TaskType::caption) {
  EmbeddingClip c;
  c.id = std::move(id);
  c.task = task;
  const std::size_t f = emb.dim(0);
  c.duration_s = static_cast<double>(f);
  for (std::size_t k = 0; k < f; ++k) c.timestamps.push_back(static_cast<double>(k));
  c.embeddings = std::move(emb);
  return c;
}

EmbeddingClip repeated_clip(std::string id, std::size_t frames, Rng& rng, TaskType task = TaskType::caption) {
  const Tensor row = random_tensor({8}, rng);
  Tensor e({frames, 8});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t c = 0; c < 8; ++c) e.at({f, c}) = row[c];
  return make_clip(std::move(id), e, task);
}

double all_pairs(const Tensor& e, const std::vector<std::size_t>& idx) {
  const std::size_t d = e.dim(1);
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double x = e.at({idx[a], c}), y = e.at({idx[b], c});
        dot += x * y;
        na += x * x;
        nb += y * y;
      }
      sum += dot / std::sqrt(na * nb);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("recot_data_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("redundancy score examples") {
  Rng rng(1);
  CHECK(redundancy_score(repeated_clip("a", 30, rng), 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(redundancy_score(make_clip("b", Tensor({2, 3}, {1, 0, 0, 0, 1, 0})), 0) == 0.0);

  const EmbeddingClip r = make_clip("c", random_tensor({20, 16}, rng));
  std::vector<std::size_t> all(20);
  for (std::size_t k = 0; k < 20; ++k) all[k] = k;
  CHECK(sample_frames(r, 5) == all);
  CHECK(redundancy_score(r, 5) == doctest::Approx(all_pairs(r.embeddings, all)).epsilon(1e-12));

  CHECK_THROWS_AS(redundancy_score(make_clip("d", random_tensor({1, 4}, rng)), 0), UsageError);
}

TEST_CASE("long clips are scored on a stratified sample of 20 frames") {
  Rng rng(2);
  const EmbeddingClip c = make_clip("long", random_tensor({97, 6}, rng));
  const auto idx = sample_frames(c, 3);
  REQUIRE(idx.size() == 20);
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(idx[k] >= k * 97 / 20);
    CHECK(idx[k] < (k + 1) * 97 / 20 + 1);
  }
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(sample_frames(c, 3) == idx);
  CHECK(redundancy_score(c, 3) == doctest::Approx(all_pairs(c.embeddings, idx)).epsilon(1e-12));
}

TEST_CASE("redundancy score properties") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t f = 2 + rng.below(40);
    const EmbeddingClip c = make_clip("p" + std::to_string(trial), random_tensor({f, 5}, rng));
    const double s = redundancy_score(c, 9);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
  // Positive multiples of one vector score exactly 1.
  Tensor e({4, 3});
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t c = 0; c < 3; ++c) e.at({f, c}) = (1.0 + static_cast<double>(f)) * (0.5 + static_cast<double>(c));
  CHECK(redundancy_score(make_clip("m", e), 0) == doctest::Approx(1.0).epsilon(1e-14));

  // Reordering frames together with their timestamps leaves the score unchanged.
  EmbeddingClip a = make_clip("ord", random_tensor({12, 4}, rng));
  EmbeddingClip b = a;
  std::vector<std::size_t> perm(12);
  for (std::size_t k = 0; k < 12; ++k) perm[k] = (k * 5) % 12;
  for (std::size_t k = 0; k < 12; ++k) {
    b.timestamps[k] = a.timestamps[perm[k]];
    for (std::size_t c = 0; c < 4; ++c) b.embeddings.at({k, c}) = a.embeddings.at({perm[k], c});
  }
  CHECK(redundancy_score(a, 4) == doctest::Approx(redundancy_score(b, 4)).epsilon(1e-14));
}

TEST_CASE("prune_dataset examples") {
  Rng rng(4);
  std::vector<EmbeddingClip> clips;
  for (int k = 0; k < 10; ++k) {
    const TaskType t = static_cast<TaskType>(k % 3);
    if (k % 2 == 0) clips.push_back(repeated_clip("r" + std::to_string(k), 16, rng, t));
    else clips.push_back(make_clip("x" + std::to_string(k), random_tensor({16, 8}, rng), t));
  }
  const PruningManifest at_one = prune_dataset(clips, 1.0, 0);
  for (const auto& r : at_one.records) CHECK(r.kept == (r.id[0] == 'x'));

  const PruningManifest at_zero = prune_dataset(clips, 0.0, 0);
  for (const auto& r : at_zero.records) CHECK(r.kept == (r.score < 0.0));

  const PruningManifest mid = prune_dataset(clips, 0.9, 0);
  CHECK(mid.dropped() == 5);
  CHECK(mid.kept() == 5);
  for (const auto& r : mid.records) CHECK(r.kept == (r.id[0] == 'x'));

  std::size_t total = 0, kept = 0;
  for (const auto& [name, s] : mid.subsets) {
    CHECK(s.total == s.kept + s.dropped);
    total += s.total;
    kept += s.kept;
  }
  CHECK(total == 10);
  CHECK(kept == mid.kept());
  CHECK(mid.subsets.count("multiple-choice") == 1);
  CHECK(std::is_sorted(mid.records.begin(), mid.records.end(),
                       [](const PruneRecord& a, const PruneRecord& b) { return a.id < b.id; }));

  CHECK_THROWS_AS(prune_dataset(clips, 1.5, 0), ConfigError);
  clips.push_back(clips.front());
  CHECK_THROWS(prune_dataset(clips, 0.5, 0));
}

TEST_CASE("pruning is deterministic and monotone in the threshold") {
  Rng rng(5);
  std::vector<EmbeddingClip> clips;
  for (int k = 0; k < 30; ++k) {
    Tensor e = random_tensor({25, 6}, rng, 0.0, 1.0);
    clips.push_back(make_clip("c" + std::to_string(k), e, static_cast<TaskType>(k % 3)));
  }
  std::vector<EmbeddingClip> shuffled = clips;
  rng.shuffle(shuffled);
  const PruningManifest a = prune_dataset(clips, 0.75, 2);
  CHECK(manifest_jsonl(a) == manifest_jsonl(prune_dataset(shuffled, 0.75, 2)));

  for (int step = 0; step < 20; ++step) {
    const PruningManifest low = prune_dataset(clips, step * 0.05, 2), high = prune_dataset(clips, (step + 1) * 0.05, 2);
    for (std::size_t k = 0; k < low.records.size(); ++k)
      if (!high.records[k].kept) CHECK_FALSE(low.records[k].kept);
  }
}

TEST_CASE("manifest is versioned JSON lines") {
  Rng rng(6);
  std::vector<EmbeddingClip> clips = {repeated_clip("a", 4, rng), make_clip("b", random_tensor({4, 8}, rng), TaskType::open_ended)};
  const PruningManifest m = prune_dataset(clips, 0.9, 7);
  std::istringstream in(manifest_jsonl(m));
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.at("schema") == kManifestSchema);
  CHECK(rows[0].at("id") == "a");
  CHECK(rows[0].at("kept") == false);
  CHECK(rows[1].at("task") == "open-ended");
  CHECK(rows[2].at("kept").get<std::size_t>() == 1);
  CHECK(rows[2].at("threshold").get<double>() == 0.9);
}

TEST_CASE("clip directories round-trip and report bad files") {
  TempDir dir;
  Rng rng(7);
  const EmbeddingClip a = make_clip("alpha", random_tensor({5, 4}, rng), TaskType::multiple_choice);
  const EmbeddingClip b = make_clip("beta", random_tensor({3, 4}, rng));
  write_clip(dir.path, a);
  write_clip(dir.path, b);
  ClipDirectory got = read_clip_directory(dir.path);
  REQUIRE(got.clips.size() == 2);
  CHECK(got.failures.empty());
  CHECK(got.clips[0].id == "alpha");
  CHECK(got.clips[0].task == TaskType::multiple_choice);
  CHECK(bit_equal(got.clips[0].embeddings, a.embeddings));
  CHECK(got.clips[1].timestamps == b.timestamps);

  {
    std::ofstream corrupt(dir.path / "beta.emb", std::ios::binary | std::ios::trunc);
    corrupt << "RCOTgarbage";
  }
  got = read_clip_directory(dir.path);
  CHECK(got.clips.size() == 1);
  REQUIRE(got.failures.size() == 1);
  CHECK(got.failures[0].file.find("beta") != std::string::npos);
}

TEST_CASE("empty and malformed clip directories") {
  TempDir empty;
  CHECK(read_clip_directory(empty.path).clips.empty());

  TempDir bad;
  {
    std::ofstream meta(bad.path / kMetadataFile);
    meta << "{not json\n";
  }
  CHECK_THROWS_AS(read_clip_directory(bad.path), ConfigError);
  CHECK_THROWS_AS(read_clip_directory(bad.path / "nope"), FormatError);
}

TEST_CASE("clip validation") {
  Rng rng(8);
  EmbeddingClip c = make_clip("v", random_tensor({3, 2}, rng));
  c.timestamps.pop_back();
  CHECK_THROWS(c.validate());
  c.timestamps = {2.0, 0.0, 1.0};
  CHECK_NOTHROW(c.validate());
  c.timestamps = {1.0, 0.0, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_task_type("caption") == TaskType::caption);
  CHECK_THROWS_AS(parse_task_type("summary"), ConfigError);
}

TEST_CASE("variable sampling examples") {
  const SamplingPlan train = variable_sampling_plan(600.0, SamplingMode::training, 1);
  CHECK(train.fps == 1.0);
  CHECK(train.timestamps.size() == 360);
  const SamplingPlan tune = variable_sampling_plan(600.0, SamplingMode::finetune, 1);
  CHECK(tune.fps == 1.0);
  CHECK(tune.timestamps.size() == 240);

  bool saw_three = false;
  for (std::uint64_t seed = 0; seed < 20 && !saw_three; ++seed) {
    const SamplingPlan p = variable_sampling_plan(10.0, SamplingMode::training, seed);
    CHECK((p.fps == 2.0 || p.fps == 3.0));
    if (p.fps != 3.0) continue;
    saw_three = true;
    REQUIRE(p.timestamps.size() == 30);
    for (std::size_t k = 0; k < 30; ++k) CHECK(p.timestamps[k] == doctest::Approx(static_cast<double>(k) / 3.0));
  }
  CHECK(saw_three);
  CHECK_THROWS(variable_sampling_plan(0.0, SamplingMode::training, 0));
  CHECK_THROWS(variable_sampling_plan(-3.0, SamplingMode::finetune, 0));
}

TEST_CASE("sampling plan properties") {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const double dur = rng.uniform(0.1, 2000.0);
    const SamplingMode mode = trial % 2 ? SamplingMode::training : SamplingMode::finetune;
    const SamplingPlan p = variable_sampling_plan(dur, mode, rng.next_u64());
    CHECK(p.timestamps.size() <= (mode == SamplingMode::training ? 360u : 240u));
    CHECK_FALSE(p.timestamps.empty());
    CHECK(p.timestamps.front() >= 0.0);
    CHECK(p.timestamps.back() <= dur);
    for (std::size_t k = 1; k < p.timestamps.size(); ++k) CHECK(p.timestamps[k] > p.timestamps[k - 1]);
    if (p.timestamps.size() < (mode == SamplingMode::training ? 360u : 240u) && p.timestamps.size() > 1)
      for (std::size_t k = 1; k < p.timestamps.size(); ++k)
        CHECK(p.timestamps[k] - p.timestamps[k - 1] == doctest::Approx(1.0 / p.fps));
  }
  CHECK(uniform_subsample(5, 10) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(uniform_subsample(10, 4) == std::vector<std::size_t>{0, 2, 5, 7});
}
