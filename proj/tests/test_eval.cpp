#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "recot/errors.hpp"
#include "recot/eval.hpp"

using namespace recot;

namespace {

const HaystackWorld& world() {
  static const HaystackWorld w;
  return w;
}

NeedleSweepConfig small_sweep() {
  NeedleSweepConfig s;
  s.frames = {4, 8};
  s.depths = {0.0, 0.5, 1.0};
  s.seeds = 20;
  return s;
}

DtsModel small_dts(std::size_t ratio) {
  DtsConfig c;
  c.dim = world().encoder.dim();
  c.tokens_per_frame = world().encoder.tokens_per_frame();
  c.ratio = ratio;
  return init_dts(c, 3);
}

SelectorModel trained_selector() {
  SelectorConfig sc;
  sc.token_dim = world().encoder.dim();
  sc.seed = 4;
  SelectorModel m = init_selector(sc);
  SelectorTrainConfig tc;
  tc.steps = 150;
  tc.seed = 5;
  train_selector(needle_examples(world(), 96, 4, 6), m, tc);
  return m;
}

}  // namespace

TEST_CASE("identity pipeline retains every needle") {
  const EvalReport r = eval_needle(world(), small_sweep(), NeedlePipeline{});
  CHECK(r.metric("mean_retention") == 1.0);
  CHECK(r.metric("min_cell_retention") == 1.0);
  CHECK(r.metric("cells") == 6.0);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.columns.size() == 4);
  for (const auto& row : r.rows)
    for (std::size_t k = 1; k < row.size(); ++k) CHECK(row[k] == "1");
}

TEST_CASE("needle reports are reproducible") {
  const DtsModel dts = small_dts(2);
  NeedlePipeline p;
  p.dts = &dts;
  const EvalReport a = eval_needle(world(), small_sweep(), p);
  const EvalReport b = eval_needle(world(), small_sweep(), p);
  CHECK(a.json() == b.json());
  CHECK(a.csv() == b.csv());
}

TEST_CASE("selector with a budget covering every token matches DTS-only retention") {
  const DtsModel dts = small_dts(2);
  const SelectorModel sel = trained_selector();
  NeedlePipeline dts_only;
  dts_only.dts = &dts;
  NeedlePipeline gated = dts_only;
  gated.selector = &sel;
  gated.keep_rate = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    HaystackSpec s;
    s.frames = 6;
    s.needle_frame = seed % 6;
    s.pattern = seed % kNeedlePatterns;
    s.seed = seed;
    const Haystack h = gen_haystack(s, world());
    const std::string q = needle_query(s.pattern, seed % query_variants());
    const NeedleOutcome a = needle_retention(h, q, world(), dts_only);
    const NeedleOutcome b = needle_retention(h, q, world(), gated);
    CHECK(a.retained == b.retained);
    CHECK(a.best_cosine == b.best_cosine);
    CHECK(b.kept == b.tokens);
  }
}

TEST_CASE("pipelines that do not fit the world are rejected") {
  DtsConfig c;
  c.dim = 16;
  c.tokens_per_frame = world().encoder.tokens_per_frame();
  const DtsModel wrong = init_dts(c, 1);
  NeedlePipeline p;
  p.dts = &wrong;
  CHECK_THROWS_AS(check_pipeline(p, world()), DimensionError);
  CHECK_THROWS_AS(eval_needle(world(), small_sweep(), p), DimensionError);
  NeedlePipeline bad_rate;
  bad_rate.keep_rate = 0.0;
  CHECK_THROWS_AS(check_pipeline(bad_rate, world()), ConfigError);
}

TEST_CASE("needle depth maps onto frame indices") {
  CHECK(needle_frame_at(0.0, 16) == 0);
  CHECK(needle_frame_at(1.0, 16) == 15);
  CHECK(needle_frame_at(0.5, 17) == 8);
}

TEST_CASE("selector keep-rate sweep") {
  const SelectorModel sel = trained_selector();
  CHECK(selector_retention(world(), sel, 1.0, 40, 4, 7) == 1.0);
  const std::vector<double> rates = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const EvalReport r = sweep_selector_rate(world(), sel, rates, 40, 4, 7);
  CHECK(r.rows.size() == 9);
  CHECK(r.metric("max_monotonicity_violation") <= 0.02);
  CHECK(selector_retention(world(), sel, 0.1, 40, 4, 7) >= selector_retention(world(), sel, 0.05, 40, 4, 7));
}

TEST_CASE("linear probe on separable and shuffled data") {
  ProbeExperiment e;
  e.train_clips = 64;
  e.test_clips = 256;
  e.frames = 4;
  e.seed = 3;
  const ProbeResult sep = run_probe(world(), e, nullptr);
  CHECK(sep.raw >= 0.95);
  CHECK_FALSE(sep.compressed.has_value());

  e.shuffle_labels = true;
  double chance = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    e.seed = 100 + seed;
    chance += run_probe(world(), e, nullptr).raw / 5.0;
  }
  CHECK(std::abs(chance - 0.5) <= 0.05);

  Tensor x({4, 2}, {0, 0, 1, 1, 0, 1, 1, 0});
  CHECK_THROWS_AS(linear_probe(x, {1, 1, 1, 1}, x, {1, 1, 1, 1}), UsageError);
}

TEST_CASE("linear probe learns a hand-made separable set exactly") {
  Tensor train({6, 2}, {-2, 0, -1, 1, -3, -1, 2, 0, 1, -1, 3, 1});
  const std::vector<int> labels = {0, 0, 0, 1, 1, 1};
  CHECK(linear_probe(train, labels, train, labels) == 1.0);
}

TEST_CASE("compressed features stay close to raw after training") {
  TrainConfig tc;
  tc.steps = 60;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 9;
  tc.dts.dim = world().encoder.dim();
  tc.dts.tokens_per_frame = world().encoder.tokens_per_frame();
  TrainState s = init_train_state(tc);
  const auto clips = labeled_texture_clips(world(), 32, 8, 1.0, 10);
  std::vector<FrameTokenGrid> corpus;
  for (const auto& c : clips) corpus.push_back(c.grid);
  train(s, corpus);
  ProbeExperiment e;
  e.train_clips = 64;
  e.test_clips = 256;
  e.seed = 11;
  const ProbeResult r = run_probe(world(), e, &s.model);
  REQUIRE(r.compressed.has_value());
  CHECK(*r.compressed >= r.raw - 0.05);
}

TEST_CASE("SGM targets planted background tokens") {
  const auto clips = planted_redundancy_corpus(world().encoder, 50, 8, 6, 12);
  const MaskTargeting m = background_mask_rates(clips, init_sgm(world().encoder.dim()), 0.5, 13);
  CHECK(m.expected_random == 0.5);
  CHECK(m.sgm_rate >= 2.0 * m.expected_random);
  CHECK(std::abs(m.random_rate - 0.5) < 0.05);
}

TEST_CASE("SGM ablation report has one matched row per variant") {
  AblationConfig c;
  c.train.steps = 6;
  c.train.batch_size = 4;
  c.train.learning_rate = 1e-3;
  c.train.dts.dim = world().encoder.dim();
  c.train.dts.tokens_per_frame = world().encoder.tokens_per_frame();
  c.clips = 8;
  c.probe.train_clips = 32;
  c.probe.test_clips = 64;
  c.probe.frames = 4;
  const EvalReport a = ablate_sgm(world(), c);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0][0] == "sgm");
  CHECK(a.rows[1][0] == "random");
  CHECK(std::isfinite(a.metric("sgm_final_mse")));
  CHECK(std::isfinite(a.metric("random_final_mse")));
  CHECK(a.json() == ablate_sgm(world(), c).json());
}

TEST_CASE("reports are written as JSON and CSV") {
  EvalReport r;
  r.name = "demo";
  r.config["seed"] = 3;
  r.metrics = {{"score", 0.1 + 0.2}};
  r.columns = {"a", "b"};
  r.rows = {{"1", "x"}, {"2", "y"}};
  r.runtime_s = 12.5;
  CHECK(r.csv() == "a,b\n1,x\n2,y\n");
  const auto j = nlohmann::json::parse(r.json());
  CHECK(j.at("metrics").at("score").get<double>() == 0.1 + 0.2);
  CHECK_FALSE(j.contains("runtime_s"));
  CHECK_THROWS(r.metric("missing"));
  CHECK(format_number(0.1 + 0.2) == "0.30000000000000004");

  const auto dir = std::filesystem::temp_directory_path() / ("recot_report_" + std::to_string(std::random_device{}()));
  write_report(dir, r);
  std::ifstream csv(dir / "demo.csv");
  std::stringstream ss;
  ss << csv.rdbuf();
  CHECK(ss.str() == r.csv());
  CHECK(std::filesystem::exists(dir / "demo.json"));
  std::filesystem::remove_all(dir);
}
