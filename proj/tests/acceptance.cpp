// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <tuple>
#include <sstream>
#include <string>
#include <vector>

#include "recot/container.hpp"
#include "recot/data_tools.hpp"
#include "recot/errors.hpp"
#include "recot/eval.hpp"
#include "recot/sgm.hpp"
#include "recot/selector.hpp"
#include "recot/trainer.hpp"

using namespace recot;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

const HaystackWorld& world() {
  static const HaystackWorld w;
  return w;
}

// Shared between criteria 4 and 9.
std::optional<DtsModel> trained_r4;

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport r = gradient_check(GradcheckConfig::tiny());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream d;
  d << r.checked << " scalars, worst " << r.worst_parameter << " rel err " << fmt("%.2e", r.worst_error) << ", "
    << fmt("%.1f", secs) << " s";
  return {r.passed(1e-4) && r.checked > 0 && secs < 60.0, d.str()};
}

Outcome compression_arithmetic() {
  bool ok = true;
  std::ostringstream d;
  for (std::size_t r : {4, 8}) {
    DtsConfig c;
    c.dim = 4;
    c.heads = 1;
    c.ratio = r;
    c.tokens_per_frame = 576;
    const DtsModel m = init_dts(c, 1);
    Rng rng(r);
    const CompressedGrid g = dts_forward(FrameTokenGrid(random_tensor({8, 576, 4}, rng)), m);
    const double per = g.tokens_per_source_frame();
    ok = ok && per == 576.0 / static_cast<double>(r) && g.tokens.dim(1) == 576;
    d << "N=576 r=" << r << " -> " << per << " tokens/frame; ";
  }
  std::size_t cases = 0;
  for (std::size_t r : {2, 4, 8}) {
    DtsConfig c;
    c.dim = 4;
    c.heads = 1;
    c.ratio = r;
    c.tokens_per_frame = 2;
    const DtsModel m = init_dts(c, r);
    Rng rng(10 + r);
    for (std::size_t t = 1; t <= 64; ++t, ++cases) {
      const CompressedGrid g = dts_forward(FrameTokenGrid(random_tensor({t, 2, 4}, rng)), m);
      ok = ok && g.merged_frames() == (t + r - 1) / r && merged_frame_count(t, r) == (t + r - 1) / r;
    }
  }
  d << cases << " (T, r) cases match ceil(T/r)";
  return {ok, d.str()};
}

Outcome half_size_decoder() {
  std::vector<std::pair<std::string, DtsConfig>> configs;
  for (std::size_t r : {2, 4, 8}) {
    DtsConfig c;
    c.ratio = r;
    configs.emplace_back("default r=" + std::to_string(r), c);
  }
  configs.emplace_back("gradcheck tiny", GradcheckConfig::tiny().train.dts);
  for (const auto& entry : fs::directory_iterator(RECOT_SOURCE_DIR "/configs")) {
    if (entry.path().extension() != ".cfg") continue;
    ConfigReader r(read_key_value_file(entry.path()));
    TrainConfig t;
    t.read(r);
    configs.emplace_back(entry.path().filename().string(), t.dts);
  }
  double lo = 1.0, hi = 0.0;
  for (const auto& [name, c] : configs) {
    const std::size_t dec = resolve_decoder_depth(c);
    const double ratio = static_cast<double>(param_count(c, dec, ModelPart::decoder)) /
                         static_cast<double>(param_count(c, dec, ModelPart::encoder));
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  std::ostringstream d;
  d << configs.size() << " configs, decoder/encoder ratio in [" << fmt("%.4f", lo) << ", " << fmt("%.4f", hi) << "]";
  return {lo >= kMinDecoderRatio && hi <= kMaxDecoderRatio, d.str()};
}

TrainConfig criterion4_config() {
  TrainConfig c;
  c.steps = 500;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  c.seed = 4;
  return c;
}

Outcome learning_signal() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = haystack_corpus(world(), 64, 8, 1);
  auto run = [&](std::vector<double>& losses) {
    TrainState s = init_train_state(criterion4_config());
    const double before = reconstruction_mse(corpus, s.model);
    train(s, corpus, [&](const StepResult& r, const TrainState&) { losses.push_back(r.loss); });
    return std::make_tuple(before, reconstruction_mse(corpus, s.model), std::move(s));
  };
  std::vector<double> la, lb;
  auto [before, after, state] = run(la);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto [before_b, after_b, state_b] = run(lb);
  bool same = la == lb && before == before_b && after == after_b;
  const auto pa = state.parameters(), pb = state_b.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) same = same && bit_equal(*pa[k].second, *pb[k].second);
  trained_r4 = state.model;
  std::ostringstream d;
  d << "MSE " << fmt("%.4f", before) << " -> " << fmt("%.4f", after) << " (x" << fmt("%.3f", after / before)
    << "), replay " << (same ? "bit-identical" : "DIFFERS") << ", " << fmt("%.1f", secs) << " s per run";
  return {after <= 0.5 * before && same && secs < 600.0, d.str()};
}

Outcome sgm_structure() {
  Rng rng(55);
  std::size_t cases = 0, mean_cases = 0;
  bool ok = true;
  for (int trial = 0; trial < 500; ++trial, ++cases) {
    const std::size_t t = 1 + rng.below(8), n = 1 + rng.below(12), d = 2 + rng.below(7);
    SgmParams q{random_tensor({d, d}, rng), random_tensor({d, d}, rng)};
    const TokenScores s = sgm_scores(FrameTokenGrid(random_tensor({t, n, d}, rng)), q);
    for (std::size_t i = 0; i < n; ++i) ok = ok && s.score_temp[i] == 0.0;
    for (std::size_t k = 0; k < t * n; ++k) ok = ok && s.scores[k] == s.score_temp[k] + s.score_spa[k];
    const double rho = rng.uniform(0.0, 0.99);
    const MaskPlan p = make_mask_plan(s, rho, rng.next_u64());
    ok = ok && p.masked_count() == static_cast<std::size_t>(std::llround(rho * static_cast<double>(t * n)));
    const bool constant = std::all_of(s.scores.values().begin(), s.scores.values().end(),
                                      [&](double v) { return v == s.scores[0]; });
    if (!constant && p.masked_count() > 0) {
      double all = 0.0, masked = 0.0;
      for (std::size_t k = 0; k < t * n; ++k) {
        all += s.scores[k];
        if (p.mask[k]) masked += s.scores[k];
      }
      ok = ok && masked / static_cast<double>(p.masked_count()) <= all / static_cast<double>(t * n) + 1e-12;
      ++mean_cases;
    }
  }
  return {ok, std::to_string(cases) + " random grids; mean-score check on " + std::to_string(mean_cases)};
}

Outcome sgm_targeting() {
  const auto clips = planted_redundancy_corpus(world().encoder, 200, 8, 6, 3);
  const MaskTargeting m = background_mask_rates(clips, init_sgm(world().encoder.dim()), 0.5, 9);
  std::ostringstream d;
  d << "background masked by SGM " << fmt("%.4f", m.sgm_rate) << ", random " << fmt("%.4f", m.random_rate)
    << " (expected " << m.expected_random << "), ratio " << fmt("%.3f", m.sgm_rate / m.expected_random);
  return {m.sgm_rate >= 2.0 * m.expected_random, d.str()};
}

Outcome selector_correctness() {
  Rng rng(77);
  const std::size_t cases = 4000;
  std::size_t budget_ok = 0, order_ok = 0, affine_ok = 0, gating_ok = 0, gating_cases = 0, activated = 0;
  for (std::size_t k = 0; k < cases; ++k) {
    const std::size_t m = 1 + rng.below(200), b = 1 + rng.below(220);
    std::vector<double> s(m);
    for (double& v : s) v = rng.below(4) == 0 ? 0.5 : rng.uniform();
    const SelectionResult r = select_tokens(s, b);
    bool strictly = true;
    for (std::size_t i = 1; i < r.kept.size(); ++i) strictly = strictly && r.kept[i] > r.kept[i - 1];
    order_ok += strictly ? 1 : 0;
    if (m > b) {
      ++activated;
      budget_ok += r.activated && r.kept.size() == b ? 1 : 0;
    } else {
      ++gating_cases;
      std::vector<std::size_t> all(m);
      std::iota(all.begin(), all.end(), 0);
      gating_ok += !r.activated && r.kept == all ? 1 : 0;
    }
    const double a = std::exp(rng.uniform(-3.0, 3.0)), off = rng.uniform(-5.0, 5.0);
    std::vector<double> t(m);
    for (std::size_t i = 0; i < m; ++i) t[i] = a * s[i] + off;
    affine_ok += select_tokens(t, b).kept == r.kept ? 1 : 0;
  }
  std::size_t drops = 0, drop_ok = 0;
  for (std::size_t k = 0; k < 5000; ++k, ++drops) {
    std::vector<double> s(1 + rng.below(300));
    for (double& v : s) v = rng.uniform();
    const DropResult d = train_drop(s, rng, k % 2 ? DropMode::uniform : DropMode::lowest_score);
    const std::size_t want = static_cast<std::size_t>(std::llround(d.rho * static_cast<double>(s.size())));
    drop_ok += d.rho >= kMinTrainDrop && d.rho <= kMaxTrainDrop && s.size() - d.kept.size() == want ? 1 : 0;
  }
  std::ostringstream d;
  d << "budget " << budget_ok << "/" << activated << ", order " << order_ok << "/" << cases << ", affine "
    << affine_ok << "/" << cases << ", gating " << gating_ok << "/" << gating_cases << ", drop rate " << drop_ok
    << "/" << drops;
  const bool ok = budget_ok == activated && activated >= 1000 && order_ok == cases && affine_ok == cases &&
                  gating_ok == gating_cases && gating_cases >= 1000 && drop_ok == drops;
  return {ok, d.str()};
}

SelectorModel& trained_selector() {
  static SelectorModel model = [] {
    SelectorConfig sc;
    sc.token_dim = world().encoder.dim();
    sc.seed = 1;
    SelectorModel m = init_selector(sc);
    SelectorTrainConfig tc;
    tc.seed = 1;
    train_selector(needle_examples(world(), 96, 16, 17), m, tc);
    return m;
  }();
  return model;
}

Outcome keep_rate_retention() {
  const SelectorModel& sel = trained_selector();
  const double half = selector_retention(world(), sel, 0.5, 200, 32, 3);
  const double full = selector_retention(world(), sel, 1.0, 200, 32, 3);
  return {half >= 0.95 && full == 1.0,
          "200 trials: retention " + fmt("%.4f", half) + " at 50% keep, " + fmt("%.4f", full) + " at 100%"};
}

Outcome needle_sweep() {
  if (!trained_r4) return {false, "no trained r=4 model (learning-signal criterion did not run)"};
  const auto t0 = std::chrono::steady_clock::now();
  const NeedleSweepConfig sweep;
  const EvalReport identity = eval_needle(world(), sweep, NeedlePipeline{});
  NeedlePipeline p;
  p.dts = &*trained_r4;
  p.selector = &trained_selector();
  p.keep_rate = 0.5;
  const EvalReport trained = eval_needle(world(), sweep, p);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream d;
  d << "identity min cell " << identity.metric("min_cell_retention") << "; r=4 + 50% keep over T<=256: mean "
    << fmt("%.4f", trained.metric("mean_retention")) << ", min cell " << fmt("%.4f", trained.metric("min_cell_retention"))
    << ", min best cosine " << fmt("%.3f", trained.metric("min_best_cosine")) << ", " << fmt("%.1f", secs) << " s";
  return {identity.metric("min_cell_retention") == 1.0 && trained.metric("mean_retention") >= 0.95 && secs < 900.0,
          d.str()};
}

Outcome pruning() {
  Rng rng(31);
  std::vector<EmbeddingClip> clips;
  std::vector<bool> redundant;
  for (int k = 0; k < 40; ++k) {
    EmbeddingClip c;
    c.id = "clip" + std::to_string(100 + k);
    c.task = static_cast<TaskType>(k % 3);
    c.duration_s = 30.0;
    c.embeddings = Tensor({30, 16});
    const Tensor row = random_tensor({16}, rng);
    for (std::size_t f = 0; f < 30; ++f) {
      c.timestamps.push_back(static_cast<double>(f));
      for (std::size_t j = 0; j < 16; ++j) c.embeddings.at({f, j}) = k % 2 == 0 ? row[j] : rng.normal();
    }
    redundant.push_back(k % 2 == 0);
    clips.push_back(std::move(c));
  }
  const PruningManifest m = prune_dataset(clips, 0.9, 5);
  bool exact = m.dropped() == 20;
  for (const auto& r : m.records) exact = exact && r.kept == !redundant[std::stoul(r.id.substr(4)) - 100];
  bool monotone = true;
  std::size_t prev_kept = 0;
  for (int step = 0; step <= 100; ++step) {
    const PruningManifest cur = prune_dataset(clips, step / 100.0, 5);
    if (step > 0) monotone = monotone && cur.kept() >= prev_kept;
    const PruningManifest next = prune_dataset(clips, std::min(1.0, (step + 1) / 100.0), 5);
    for (std::size_t k = 0; k < cur.records.size(); ++k) monotone = monotone && (!cur.records[k].kept || next.records[k].kept);
    prev_kept = cur.kept();
  }
  const bool stable = manifest_jsonl(m) == manifest_jsonl(prune_dataset(clips, 0.9, 5));
  std::ostringstream d;
  d << "dropped " << m.dropped() << "/40 (" << (exact ? "exactly the redundant half" : "WRONG set") << "), monotone "
    << (monotone ? "yes" : "no") << " over 101 thresholds, rerun " << (stable ? "byte-identical" : "DIFFERS");
  return {exact && monotone && stable, d.str()};
}

Outcome sampling_caps() {
  const auto train = variable_sampling_plan(600.0, SamplingMode::training, 1);
  const auto tune = variable_sampling_plan(600.0, SamplingMode::finetune, 1);
  Rng rng(41);
  std::size_t increasing = 0;
  const std::size_t cases = 2000;
  for (std::size_t k = 0; k < cases; ++k) {
    const auto p = variable_sampling_plan(rng.uniform(0.05, 3000.0), k % 2 ? SamplingMode::training : SamplingMode::finetune,
                                          rng.next_u64());
    bool inc = true;
    for (std::size_t i = 1; i < p.timestamps.size(); ++i) inc = inc && p.timestamps[i] > p.timestamps[i - 1];
    increasing += inc ? 1 : 0;
  }
  std::ostringstream d;
  d << "600 s -> " << train.timestamps.size() << " (training), " << tune.timestamps.size()
    << " (finetune); strictly increasing in " << increasing << "/" << cases;
  return {train.timestamps.size() == 360 && tune.timestamps.size() == 240 && increasing == cases, d.str()};
}

Outcome checkpoint_integrity() {
  TrainConfig c;
  c.steps = 16;
  c.batch_size = 2;
  c.learning_rate = 5e-3;
  c.seed = 12;
  c.dts.dim = 8;
  c.dts.heads = 2;
  c.dts.ratio = 2;
  c.dts.tokens_per_frame = 4;
  Rng rng(13);
  std::vector<FrameTokenGrid> corpus;
  for (int k = 0; k < 6; ++k) corpus.emplace_back(random_tensor({4, 4, 8}, rng));

  const fs::path dir = fs::temp_directory_path() / "recot_acceptance_ckpt";
  fs::create_directories(dir);
  TrainState straight = init_train_state(c);
  train(straight, corpus);

  TrainState part = init_train_state(c);
  for (int k = 0; k < 7; ++k) recot_step(part, corpus);
  save_checkpoint(dir / "k.rcot", part);
  TrainState loaded = load_checkpoint(dir / "k.rcot");
  const bool round_trip = encode_checkpoint(loaded) == encode_checkpoint(part);
  train(loaded, corpus);
  bool resume = loaded.rng == straight.rng && loaded.step == straight.step;
  const auto pa = loaded.parameters(), pb = straight.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) resume = resume && bit_equal(*pa[k].second, *pb[k].second);
  fs::remove_all(dir);

  const auto good = encode_checkpoint(part);
  auto kind_of = [](std::vector<std::uint8_t> bytes) {
    try {
      decode_checkpoint(bytes);
    } catch (const FormatError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto magic = good, version = good, cut = good, flip = good;
  magic[1] ^= 0x20;
  version[4] = 7;
  cut.resize(good.size() - 9);
  flip[good.size() / 2] ^= 0x10;
  const bool variants = kind_of(magic) == static_cast<int>(FormatError::Kind::bad_magic) &&
                        kind_of(version) == static_cast<int>(FormatError::Kind::version_mismatch) &&
                        kind_of(cut) == static_cast<int>(FormatError::Kind::truncated) &&
                        kind_of(flip) == static_cast<int>(FormatError::Kind::checksum_mismatch);
  std::ostringstream d;
  d << "round trip " << (round_trip ? "bit-identical" : "DIFFERS") << ", resume at step 7 of 16 "
    << (resume ? "matches" : "DIFFERS") << ", corruption variants " << (variants ? "correct" : "WRONG");
  return {round_trip && resume && variants, d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"compression arithmetic", compression_arithmetic},
      {"half-size decoder", half_size_decoder},
      {"reconstruction learning signal", learning_signal},
      {"SGM structural properties", sgm_structure},
      {"SGM background targeting", sgm_targeting},
      {"selector correctness", selector_correctness},
      {"keep-rate retention", keep_rate_retention},
      {"needle sweep", needle_sweep},
      {"dataset pruning", pruning},
      {"sampling caps", sampling_caps},
      {"checkpoint integrity", checkpoint_integrity},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
