#include "recot/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "recot/errors.hpp"
#include "recot/parallel.hpp"
#include "recot/rng.hpp"

namespace recot {

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double EvalReport::metric(const std::string& key) const {
  for (const auto& [k, v] : metrics) {
    if (k == key) return v;
  }
  throw UsageError("report " + name + " has no metric '" + key + "'");
}

std::string EvalReport::json() const {
  nlohmann::ordered_json j;
  j["experiment"] = name;
  j["config"] = config;
  nlohmann::ordered_json m = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metrics) m[k] = v;
  j["metrics"] = m;
  j["columns"] = columns;
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::string EvalReport::csv() const {
  std::ostringstream out;
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << '\n';
  }
  return out.str();
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  for (const auto& [ext, text] : {std::pair{".json", report.json()}, std::pair{".csv", report.csv()}}) {
    const auto path = dir / (report.name + ext);
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
}

// ---- needle -----------------------------------------------------------------

void check_pipeline(const NeedlePipeline& p, const HaystackWorld& world) {
  const std::size_t n = world.encoder.tokens_per_frame(), d = world.encoder.dim();
  if (p.dts && (p.dts->config.tokens_per_frame != n || p.dts->config.dim != d)) {
    throw DimensionError("checkpoint model expects N=" + std::to_string(p.dts->config.tokens_per_frame) +
                         ", D=" + std::to_string(p.dts->config.dim) + " but the encoder produces N=" +
                         std::to_string(n) + ", D=" + std::to_string(d));
  }
  if (p.selector && p.selector->config.token_dim != d) {
    throw DimensionError("selector token dim " + std::to_string(p.selector->config.token_dim) +
                         " does not match encoder dim " + std::to_string(d));
  }
  if (!(p.keep_rate > 0.0 && p.keep_rate <= 1.0)) throw ConfigError("keep rate must lie in (0, 1]");
  if (p.keep_rate < 1.0 && !p.selector) throw ConfigError("keep rate below 1 needs a selector");
}

NeedleOutcome needle_retention(const Haystack& h, const std::string& query, const HaystackWorld& world,
                               const NeedlePipeline& p) {
  const FrameTokenGrid grid = world.encoder.encode_video(h.frames);
  const std::size_t t = grid.frames(), n = grid.tokens_per_frame(), d = grid.dim();
  Tensor tokens = grid.tokens;
  if (p.dts) tokens = decoder_forward(dts_forward(grid, *p.dts), *p.dts, t);
  tokens = tokens.reshaped({t * n, d});

  std::vector<std::size_t> kept(t * n);
  std::iota(kept.begin(), kept.end(), 0);
  if (p.selector) {
    const auto scores = score_tokens(embed_query(query, *p.selector), tokens, *p.selector);
    kept = select_tokens(scores, budget_for(p.keep_rate, scores.size())).kept;
  }
  NeedleOutcome out;
  out.tokens = t * n;
  out.kept = kept.size();
  for (std::size_t row : kept) {
    out.best_cosine = std::max(out.best_cosine, cosine_similarity(tokens.values().subspan(row * d, d), h.probe.values()));
  }
  out.retained = out.best_cosine >= p.threshold;
  return out;
}

std::size_t needle_frame_at(double depth, std::size_t frames) {
  if (!(depth >= 0.0 && depth <= 1.0)) throw ConfigError("needle depth must lie in [0, 1]");
  return static_cast<std::size_t>(std::llround(depth * static_cast<double>(frames - 1)));
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

EvalReport eval_needle(const HaystackWorld& world, const NeedleSweepConfig& sweep, const NeedlePipeline& pipeline) {
  const auto start = std::chrono::steady_clock::now();
  check_pipeline(pipeline, world);
  if (sweep.frames.empty() || sweep.depths.empty() || sweep.seeds == 0) {
    throw ConfigError("needle sweep needs frame counts, depths and at least one seed");
  }
  const std::size_t cols = sweep.depths.size();
  const std::size_t cells = sweep.frames.size() * cols;
  std::vector<double> retention(cells, 0.0), min_cos(cells, 1.0);
  parallel_for(cells, [&](std::size_t cell) {
    const std::size_t frames = sweep.frames[cell / cols];
    const double depth = sweep.depths[cell % cols];
    double hits = 0.0;
    for (std::size_t s = 0; s < sweep.seeds; ++s) {
      HaystackSpec spec;
      spec.frames = frames;
      spec.needle_frame = needle_frame_at(depth, frames);
      spec.pattern = s % kNeedlePatterns;
      spec.noise = sweep.noise;
      spec.seed = mix_seed(sweep.seed, cell * 1000 + s);
      const Haystack h = gen_haystack(spec, world);
      const NeedleOutcome o = needle_retention(h, needle_query(h.pattern, s), world, pipeline);
      hits += o.retained ? 1.0 : 0.0;
      min_cos[cell] = std::min(min_cos[cell], o.best_cosine);
    }
    retention[cell] = hits / static_cast<double>(sweep.seeds);
  });

  EvalReport r;
  r.name = "needle";
  r.config["frames"] = sweep.frames;
  r.config["depths"] = sweep.depths;
  r.config["seeds"] = sweep.seeds;
  r.config["noise"] = sweep.noise;
  r.config["seed"] = sweep.seed;
  r.config["pipeline"] = pipeline.dts ? "dts" : "identity";
  r.config["ratio"] = pipeline.dts ? pipeline.dts->config.ratio : 1;
  r.config["selector"] = pipeline.selector != nullptr;
  r.config["keep_rate"] = pipeline.keep_rate;
  r.config["threshold"] = pipeline.threshold;
  r.columns.push_back("frames");
  for (double depth : sweep.depths) r.columns.push_back("depth_" + format_number(depth));
  for (std::size_t row = 0; row < sweep.frames.size(); ++row) {
    std::vector<std::string> cells_out{std::to_string(sweep.frames[row])};
    for (std::size_t c = 0; c < cols; ++c) cells_out.push_back(format_number(retention[row * cols + c]));
    r.rows.push_back(std::move(cells_out));
  }
  const double mean = std::accumulate(retention.begin(), retention.end(), 0.0) / static_cast<double>(cells);
  r.metrics = {{"mean_retention", mean},
               {"min_cell_retention", *std::min_element(retention.begin(), retention.end())},
               {"min_best_cosine", *std::min_element(min_cos.begin(), min_cos.end())},
               {"cells", static_cast<double>(cells)}};
  r.runtime_s = seconds_since(start);
  return r;
}

double selector_retention(const HaystackWorld& world, const SelectorModel& selector, double keep_rate,
                          std::size_t trials, std::size_t frames, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("selector retention needs at least one trial");
  NeedlePipeline p;
  p.selector = &selector;
  p.keep_rate = keep_rate;
  check_pipeline(p, world);
  std::vector<double> hits(trials, 0.0);
  parallel_for(trials, [&](std::size_t i) {
    Rng rng(mix_seed(seed, i));
    HaystackSpec spec;
    spec.frames = frames;
    spec.needle_frame = rng.below(frames);
    spec.pattern = rng.below(kNeedlePatterns);
    spec.seed = mix_seed(seed, 1'000'000 + i);
    const Haystack h = gen_haystack(spec, world);
    hits[i] = needle_retention(h, needle_query(h.pattern, rng.below(query_variants())), world, p).retained;
  });
  return std::accumulate(hits.begin(), hits.end(), 0.0) / static_cast<double>(trials);
}

EvalReport sweep_selector_rate(const HaystackWorld& world, const SelectorModel& selector,
                               const std::vector<double>& rates, std::size_t trials, std::size_t frames,
                               std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  if (rates.empty()) throw ConfigError("selector sweep needs at least one keep rate");
  EvalReport r;
  r.name = "selector_sweep";
  r.config["rates"] = rates;
  r.config["trials"] = trials;
  r.config["frames"] = frames;
  r.config["seed"] = seed;
  r.columns = {"keep_rate", "retention"};
  std::vector<double> retention;
  for (double rate : rates) {
    retention.push_back(selector_retention(world, selector, rate, trials, frames, seed));
    r.rows.push_back({format_number(rate), format_number(retention.back())});
  }
  // Largest drop in retention when moving to a higher keep rate.
  std::vector<std::size_t> order(rates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rates[a] < rates[b]; });
  double violation = 0.0;
  for (std::size_t k = 1; k < order.size(); ++k) {
    violation = std::max(violation, retention[order[k - 1]] - retention[order[k]]);
  }
  r.metrics = {{"min_retention", *std::min_element(retention.begin(), retention.end())},
               {"max_monotonicity_violation", violation}};
  r.runtime_s = seconds_since(start);
  return r;
}

// ---- linear probe -----------------------------------------------------------

double linear_probe(const Tensor& train, const std::vector<int>& train_labels, const Tensor& test,
                    const std::vector<int>& test_labels, const ProbeConfig& config) {
  if (train.rank() != 2 || test.rank() != 2 || train.dim(1) != test.dim(1)) {
    throw DimensionError("linear_probe: features must be [M x D] with matching D");
  }
  if (train.dim(0) != train_labels.size() || test.dim(0) != test_labels.size()) {
    throw DimensionError("linear_probe: label count does not match feature rows");
  }
  int classes = 0;
  for (int l : train_labels) {
    if (l < 0) throw ConfigError("linear_probe: negative label");
    classes = std::max(classes, l + 1);
  }
  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  for (int l : train_labels) seen[static_cast<std::size_t>(l)] = 1;
  if (std::count(seen.begin(), seen.end(), 1) < 2) throw UsageError("linear_probe: needs at least two classes");

  const std::size_t d = train.dim(1), k = static_cast<std::size_t>(classes), m = train.dim(0);
  Tensor weight({d, k}, 0.0), bias({k}, 0.0);
  Tensor target({m, k}, 0.0);
  for (std::size_t i = 0; i < m; ++i) target[i * k + static_cast<std::size_t>(train_labels[i])] = 1.0;
  AdamState adam = AdamState::zeros_like({&weight, &bias});
  for (std::size_t step = 0; step < config.steps; ++step) {
    Tape tape;
    Var w = tape.leaf(weight), b = tape.leaf(bias);
    Var loss = cross_entropy_lastdim(add_lastdim(matmul(tape.constant(train), w), b), tape.constant(target));
    tape.backward(loss);
    adam_update({&weight, &bias}, {w.grad(), b.grad()}, adam, config.learning_rate);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.dim(0); ++i) {
    std::size_t best = 0;
    double best_logit = -1e300;
    for (std::size_t c = 0; c < k; ++c) {
      double logit = bias[c];
      for (std::size_t j = 0; j < d; ++j) logit += test[i * d + j] * weight[j * k + c];
      if (logit > best_logit) {
        best_logit = logit;
        best = c;
      }
    }
    correct += static_cast<int>(best) == test_labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.dim(0));
}

Tensor pooled_features(const std::vector<LabeledClip>& clips, const DtsModel* model) {
  if (clips.empty()) throw UsageError("pooled_features: no clips");
  const std::size_t d = clips.front().grid.dim();
  Tensor out({clips.size(), d});
  parallel_for(clips.size(), [&](std::size_t c) {
    const Tensor tokens = model ? dts_forward(clips[c].grid, *model).tokens : clips[c].grid.tokens;
    const std::size_t rows = tokens.numel() / d;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) out[c * d + j] += tokens[r * d + j];
    for (std::size_t j = 0; j < d; ++j) out[c * d + j] /= static_cast<double>(rows);
  });
  return out;
}

ProbeResult run_probe(const HaystackWorld& world, const ProbeExperiment& e, const DtsModel* model) {
  const auto train = labeled_texture_clips(world, e.train_clips, e.frames, e.shift, mix_seed(e.seed, 1));
  const auto test = labeled_texture_clips(world, e.test_clips, e.frames, e.shift, mix_seed(e.seed, 2));
  std::vector<int> train_labels, test_labels;
  for (const auto& c : train) train_labels.push_back(c.label);
  for (const auto& c : test) test_labels.push_back(c.label);
  if (e.shuffle_labels) {
    Rng rng(mix_seed(e.seed, 3));
    rng.shuffle(train_labels);
  }
  ProbeResult r;
  r.raw = linear_probe(pooled_features(train, nullptr), train_labels, pooled_features(test, nullptr), test_labels,
                       e.probe);
  if (model) {
    r.compressed = linear_probe(pooled_features(train, model), train_labels, pooled_features(test, model),
                                test_labels, e.probe);
  }
  return r;
}

// ---- SGM ablation -----------------------------------------------------------

MaskTargeting background_mask_rates(const std::vector<PlantedClip>& clips, const SgmParams& sgm, double ratio,
                                    std::uint64_t seed) {
  double sgm_hits = 0.0, random_hits = 0.0, background = 0.0;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const FrameTokenGrid& g = clips[c].grid;
    const MaskPlan smart = make_mask_plan(sgm_scores(g, sgm), ratio, mix_seed(seed, c));
    const MaskPlan random = random_mask_plan(g.frames(), g.tokens_per_frame(), ratio, mix_seed(seed, c));
    for (std::size_t t = 0; t < g.frames(); ++t) {
      for (std::size_t i = 0; i < g.tokens_per_frame(); ++i) {
        if (!clips[c].background[i]) continue;
        background += 1.0;
        sgm_hits += smart.masked(t, i) ? 1.0 : 0.0;
        random_hits += random.masked(t, i) ? 1.0 : 0.0;
      }
    }
  }
  if (background == 0.0) throw UsageError("background_mask_rates: corpus has no background tokens");
  return {sgm_hits / background, random_hits / background, ratio};
}

EvalReport ablate_sgm(const HaystackWorld& world, const AblationConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const auto planted =
      planted_redundancy_corpus(world.encoder, config.clips, config.frames, config.background_tokens, config.seed);
  std::vector<FrameTokenGrid> corpus;
  for (const auto& c : planted) corpus.push_back(c.grid);

  EvalReport r;
  r.name = "ablate_sgm";
  r.config["train"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config.train.to_key_values()) {
    if (k != "masking") r.config["train"][k] = v;
  }
  r.config["clips"] = config.clips;
  r.config["frames"] = config.frames;
  r.config["background_tokens"] = config.background_tokens;
  r.config["seed"] = config.seed;
  r.columns = {"variant", "final_mse", "probe_accuracy", "background_mask_rate"};

  for (MaskingPolicy policy : {MaskingPolicy::sgm, MaskingPolicy::random}) {
    TrainConfig cfg = config.train;
    cfg.masking = policy;
    TrainState state = init_train_state(cfg);
    train(state, corpus);
    const double final_mse = reconstruction_mse(corpus, state.model);
    const ProbeResult probe = run_probe(world, config.probe, &state.model);
    const MaskTargeting rates = background_mask_rates(planted, state.sgm, cfg.mask_ratio, mix_seed(config.seed, 9));
    const double bg_rate = policy == MaskingPolicy::sgm ? rates.sgm_rate : rates.random_rate;
    const std::string name = to_string(policy);
    r.rows.push_back({name, format_number(final_mse), format_number(*probe.compressed), format_number(bg_rate)});
    r.metrics.emplace_back(name + "_final_mse", final_mse);
    r.metrics.emplace_back(name + "_probe_accuracy", *probe.compressed);
    r.metrics.emplace_back(name + "_background_mask_rate", bg_rate);
  }
  r.metrics.emplace_back("expected_random_rate", config.train.mask_ratio);
  r.runtime_s = seconds_since(start);
  return r;
}

}  // namespace recot
