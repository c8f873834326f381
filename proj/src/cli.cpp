#include "recot/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "recot/autodiff.hpp"
#include "recot/container.hpp"
#include "recot/data_tools.hpp"
#include "recot/errors.hpp"
#include "recot/eval.hpp"
#include "recot/haystack.hpp"
#include "recot/selector.hpp"
#include "recot/trainer.hpp"

namespace fs = std::filesystem;

namespace recot {

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string resume;
  std::optional<double> threshold;
  std::optional<double> keep_rate;
  std::optional<std::size_t> ratio;
  std::string data;
  std::string checkpoint;
  std::string selector;
};

KeyValues load_config(const Flags& f) { return f.config.empty() ? KeyValues{} : read_key_value_file(f.config); }

// Encoder and corpus settings shared by the commands that synthesize data.
struct WorldConfig {
  std::size_t frame_size = 16;
  std::size_t patch = 4;
  std::size_t channels = 3;
  std::uint64_t encoder_seed = 7;
  std::uint64_t world_seed = 5;

  void read(ConfigReader& r) {
    r.read("frame_size", frame_size);
    r.read("patch", patch);
    r.read("channels", channels);
    r.read("encoder_seed", encoder_seed);
    r.read("world_seed", world_seed);
  }

  HaystackWorld make(std::size_t dim) const {
    FrozenEncoderConfig e;
    e.height = e.width = frame_size;
    e.patch = patch;
    e.channels = channels;
    e.dim = dim;
    e.seed = encoder_seed;
    return HaystackWorld(e, world_seed);
  }
};

void check_model_fits(const DtsConfig& dts, const HaystackWorld& world) {
  if (dts.tokens_per_frame != world.encoder.tokens_per_frame() || dts.dim != world.encoder.dim()) {
    throw ConfigError("model expects N=" + std::to_string(dts.tokens_per_frame) + ", D=" + std::to_string(dts.dim) +
                      " but the encoder produces N=" + std::to_string(world.encoder.tokens_per_frame()) +
                      ", D=" + std::to_string(world.encoder.dim()));
  }
}

void apply_overrides(TrainConfig& cfg, const Flags& f) {
  if (f.seed) cfg.seed = *f.seed;
  if (f.ratio) cfg.dts.ratio = *f.ratio;
}

fs::path require_out(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  return f.out;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Flags& f, std::ostream& out) {
  ConfigReader r(load_config(f));
  TrainConfig cfg;
  cfg.read(r);
  WorldConfig wc;
  wc.read(r);
  std::size_t clips = 64, frames = 8, checkpoint_every = 0;
  std::uint64_t corpus_seed = 1;
  double noise = 0.05;
  r.read("corpus_clips", clips);
  r.read("corpus_frames", frames);
  r.read("corpus_seed", corpus_seed);
  r.read("corpus_noise", noise);
  r.read("checkpoint_every", checkpoint_every);
  r.finish();
  apply_overrides(cfg, f);
  cfg.validate();
  if (clips == 0 || frames == 0) throw ConfigError("corpus_clips and corpus_frames must be >= 1");
  const fs::path dir = require_out(f);

  const HaystackWorld world = wc.make(cfg.dts.dim);
  check_model_fits(cfg.dts, world);
  TrainState state = init_train_state(cfg);
  if (!f.resume.empty()) {
    state = load_checkpoint(f.resume);
    if (state.config.to_key_values() != init_train_state(cfg).config.to_key_values()) {
      throw ConfigError("config does not match the checkpoint being resumed (" + f.resume + ")");
    }
  }
  const auto corpus = haystack_corpus(world, clips, frames, corpus_seed, noise);

  fs::create_directories(dir);
  std::ofstream log(dir / "metrics.jsonl", f.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw ConfigError("cannot write " + (dir / "metrics.jsonl").string());
  out << "training " << cfg.steps << " steps from step " << state.step << " on " << clips << " clips\n";
  train(state, corpus, [&](const StepResult& s, const TrainState& st) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["loss"] = s.loss;
    j["reconstruction"] = s.reconstruction;
    j["aux"] = s.aux;
    j["lr"] = s.lr;
    log << j.dump() << '\n';
    if (checkpoint_every && s.step % checkpoint_every == 0 && s.step != st.config.steps) {
      save_checkpoint(dir / ("checkpoint_" + std::to_string(s.step) + ".rcot"), st);
    }
  });
  save_checkpoint(dir / "checkpoint.rcot", state);
  out << "final reconstruction mse " << reconstruction_mse(corpus, state.model) << "\n";
  return kExitOk;
}

// ---- prune ------------------------------------------------------------------

int cmd_prune(const Flags& f, std::ostream& out) {
  ConfigReader r(load_config(f));
  double threshold = 0.9;
  std::uint64_t seed = 0;
  r.read("threshold", threshold);
  r.read("seed", seed);
  r.finish();
  if (f.threshold) threshold = *f.threshold;
  if (f.seed) seed = *f.seed;
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("--threshold must lie in [0, 1], got " + format_number(threshold));
  }
  if (f.data.empty()) throw ConfigError("--data is required");
  const fs::path manifest_path = require_out(f);

  ClipDirectory dir = read_clip_directory(f.data);
  PruningManifest m = prune_dataset(dir.clips, threshold, seed);
  m.failures = dir.failures;
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  std::ofstream file(manifest_path, std::ios::binary);
  file << manifest_jsonl(m);
  if (!file) throw ConfigError("cannot write " + manifest_path.string());
  for (const auto& [task, s] : m.subsets) {
    out << task << ": kept " << s.kept << ", dropped " << s.dropped << " of " << s.total << "\n";
  }
  out << "total: kept " << m.kept() << ", dropped " << m.dropped() << "\n";
  for (const auto& failure : m.failures) out << "failed: " << failure.file << ": " << failure.message << "\n";
  return m.failures.empty() ? kExitOk : kExitPartialFailure;
}

// ---- eval -------------------------------------------------------------------

struct SelectorSetup {
  std::size_t examples = 96;
  std::size_t frames = 16;
  SelectorTrainConfig train;

  void read(ConfigReader& r) {
    r.read("selector_examples", examples);
    r.read("selector_frames", frames);
    r.read("selector_steps", train.steps);
    r.read("selector_lr", train.learning_rate);
  }
};

SelectorModel obtain_selector(const Flags& f, const SelectorSetup& setup, const HaystackWorld& world,
                              std::uint64_t seed, const fs::path& dir, std::ostream& out) {
  if (!f.selector.empty()) return load_selector(f.selector);
  SelectorConfig sc;
  sc.token_dim = world.encoder.dim();
  sc.seed = seed;
  SelectorModel model = init_selector(sc);
  SelectorTrainConfig tc = setup.train;
  tc.seed = seed;
  train_selector(needle_examples(world, setup.examples, setup.frames, mix_seed(seed, 17)), model, tc);
  save_selector(dir / "selector.rcot", model);
  out << "trained selector saved to " << (dir / "selector.rcot").string() << "\n";
  return model;
}

void print_report(const EvalReport& report, const fs::path& dir, std::ostream& out) {
  out << report.csv();
  for (const auto& [k, v] : report.metrics) out << k << " = " << v << "\n";
  out << "wrote " << (dir / (report.name + ".json")).string() << " and .csv (" << std::fixed << std::setprecision(1)
      << report.runtime_s << " s)\n";
  out.unsetf(std::ios::fixed);
}

int cmd_eval_needle(const Flags& f, std::ostream& out) {
  ConfigReader r(load_config(f));
  WorldConfig wc;
  wc.read(r);
  NeedleSweepConfig sweep;
  std::size_t dim = 32;
  if (auto v = r.get_double_list("frames")) {
    sweep.frames.clear();
    for (double x : *v) {
      if (!(x >= 1.0) || x != std::floor(x)) throw ConfigError("frames: expected positive integers");
      sweep.frames.push_back(static_cast<std::size_t>(x));
    }
  }
  if (auto v = r.get_double_list("depths")) sweep.depths = *v;
  r.read("seeds", sweep.seeds);
  r.read("noise", sweep.noise);
  r.read("seed", sweep.seed);
  r.read("dim", dim);
  double keep_rate = 1.0;
  r.read("keep_rate", keep_rate);
  SelectorSetup setup;
  setup.read(r);
  r.finish();
  if (f.seed) sweep.seed = *f.seed;
  if (f.keep_rate) keep_rate = *f.keep_rate;
  const fs::path dir = require_out(f);
  fs::create_directories(dir);

  std::optional<DtsModel> model;
  if (!f.checkpoint.empty()) {
    model = load_model(f.checkpoint);
    dim = model->config.dim;
    if (f.ratio && *f.ratio != model->config.ratio) {
      throw ConfigError("--ratio " + std::to_string(*f.ratio) + " does not match checkpoint ratio " +
                        std::to_string(model->config.ratio));
    }
  }
  const HaystackWorld world = wc.make(dim);
  if (model) check_model_fits(model->config, world);
  std::optional<SelectorModel> selector;
  if (keep_rate < 1.0 || !f.selector.empty()) selector = obtain_selector(f, setup, world, sweep.seed, dir, out);

  NeedlePipeline p;
  p.dts = model ? &*model : nullptr;
  p.selector = selector ? &*selector : nullptr;
  p.keep_rate = keep_rate;
  const EvalReport report = eval_needle(world, sweep, p);
  write_report(dir, report);
  print_report(report, dir, out);
  return kExitOk;
}

int cmd_eval_ablate(const Flags& f, std::ostream& out) {
  ConfigReader r(load_config(f));
  WorldConfig wc;
  wc.read(r);
  AblationConfig cfg;
  cfg.train.steps = 150;
  cfg.train.learning_rate = 1e-3;
  cfg.train.masked_only_loss = false;
  cfg.train.read(r);
  r.read("clips", cfg.clips);
  r.read("frames", cfg.frames);
  r.read("background_tokens", cfg.background_tokens);
  r.read("probe_train_clips", cfg.probe.train_clips);
  r.read("probe_test_clips", cfg.probe.test_clips);
  r.finish();
  apply_overrides(cfg.train, f);
  cfg.seed = cfg.train.seed;
  cfg.probe.seed = cfg.train.seed;
  cfg.train.validate();
  const fs::path dir = require_out(f);
  const HaystackWorld world = wc.make(cfg.train.dts.dim);
  check_model_fits(cfg.train.dts, world);
  const EvalReport report = ablate_sgm(world, cfg);
  write_report(dir, report);
  print_report(report, dir, out);
  return kExitOk;
}

int cmd_eval_probe(const Flags& f, std::ostream& out) {
  ConfigReader r(load_config(f));
  WorldConfig wc;
  wc.read(r);
  ProbeExperiment e;
  std::size_t dim = 32;
  r.read("train_clips", e.train_clips);
  r.read("test_clips", e.test_clips);
  r.read("frames", e.frames);
  r.read("shift", e.shift);
  r.read("shuffle_labels", e.shuffle_labels);
  r.read("seed", e.seed);
  r.read("probe_steps", e.probe.steps);
  r.read("dim", dim);
  r.finish();
  if (f.seed) e.seed = *f.seed;
  const fs::path dir = require_out(f);
  std::optional<DtsModel> model;
  if (!f.checkpoint.empty()) {
    model = load_model(f.checkpoint);
    dim = model->config.dim;
  }
  const HaystackWorld world = wc.make(dim);
  if (model) check_model_fits(model->config, world);
  const ProbeResult res = run_probe(world, e, model ? &*model : nullptr);

  EvalReport report;
  report.name = "probe";
  report.config["train_clips"] = e.train_clips;
  report.config["test_clips"] = e.test_clips;
  report.config["frames"] = e.frames;
  report.config["shift"] = e.shift;
  report.config["shuffle_labels"] = e.shuffle_labels;
  report.config["seed"] = e.seed;
  report.columns = {"variant", "accuracy"};
  report.rows.push_back({"raw", format_number(res.raw)});
  report.metrics.emplace_back("raw_accuracy", res.raw);
  if (res.compressed) {
    report.rows.push_back({"compressed", format_number(*res.compressed)});
    report.metrics.emplace_back("compressed_accuracy", *res.compressed);
  }
  write_report(dir, report);
  print_report(report, dir, out);
  return kExitOk;
}

int cmd_eval_selector_sweep(const Flags& f, std::ostream& out) {
  ConfigReader r(load_config(f));
  WorldConfig wc;
  wc.read(r);
  std::vector<double> rates = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t trials = 200, frames = 32, dim = 32;
  std::uint64_t seed = 0;
  if (auto v = r.get_double_list("rates")) rates = *v;
  r.read("trials", trials);
  r.read("frames", frames);
  r.read("seed", seed);
  r.read("dim", dim);
  SelectorSetup setup;
  setup.read(r);
  r.finish();
  if (f.seed) seed = *f.seed;
  const fs::path dir = require_out(f);
  fs::create_directories(dir);
  const HaystackWorld world = wc.make(dim);
  const SelectorModel selector = obtain_selector(f, setup, world, seed, dir, out);
  const EvalReport report = sweep_selector_rate(world, selector, rates, trials, frames, seed);
  write_report(dir, report);
  print_report(report, dir, out);
  return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const Flags& f, std::ostream& out) {
  ConfigReader r(load_config(f));
  GradcheckConfig g = GradcheckConfig::tiny();
  g.train.read(r);
  r.read("frames", g.frames);
  r.read("clips", g.clips);
  r.read("fd_step", g.step);
  r.read("tolerance", g.tolerance);
  bool inject = false;
  r.read("inject_gradient_fault", inject);
  r.finish();
  apply_overrides(g.train, f);
  g.train.validate();

  struct FaultGuard {
    explicit FaultGuard(bool on) { set_gradient_fault_injection(on); }
    ~FaultGuard() { set_gradient_fault_injection(false); }
  } guard(inject);
  const GradcheckReport report = gradient_check(g);
  out << std::scientific << std::setprecision(3);
  for (const auto& [group, err] : report.group_error) out << group << " max_rel_err " << err << "\n";
  out << "checked " << report.checked << " scalars; worst " << report.worst_parameter << " " << report.worst_error
      << "\n";
  out.unsetf(std::ios::scientific);
  if (!report.passed(g.tolerance)) {
    out << "FAIL: " << report.worst_parameter << " exceeds tolerance " << g.tolerance << "\n";
    return kExitVerification;
  }
  out << "OK\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"recot: reconstructive token compression toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", f.config, "key = value config file");
    cmd->add_option("--seed", f.seed, "seed override");
  };

  auto* train = app.add_subcommand("train", "train the DTS + SGM reconstruction model");
  add_common(train);
  train->add_option("--out", f.out, "output directory")->required();
  train->add_option("--resume", f.resume, "checkpoint to resume from");
  train->add_option("--ratio", f.ratio, "temporal compression ratio")->check(CLI::IsMember({2, 4, 8}));

  auto* prune = app.add_subcommand("prune", "drop semantically redundant clips");
  add_common(prune);
  prune->add_option("--data", f.data, "directory of embedding clips")->required();
  prune->add_option("--threshold", f.threshold, "redundancy threshold in [0, 1]");
  prune->add_option("--out", f.out, "manifest path (JSON lines)")->required();

  auto* eval = app.add_subcommand("eval", "run a synthetic evaluation");
  eval->require_subcommand(1);
  auto add_eval = [&](const std::string& name, const std::string& help) {
    auto* cmd = eval->add_subcommand(name, help);
    add_common(cmd);
    cmd->add_option("--out", f.out, "report directory")->required();
    return cmd;
  };
  auto* needle = add_eval("needle", "needle-in-a-haystack retention grid");
  needle->add_option("--checkpoint", f.checkpoint, "trained model (identity pipeline if omitted)");
  needle->add_option("--selector", f.selector, "trained selector");
  needle->add_option("--keep-rate", f.keep_rate, "selector keep rate in (0, 1]");
  needle->add_option("--ratio", f.ratio, "expected compression ratio")->check(CLI::IsMember({2, 4, 8}));
  auto* ablate = add_eval("ablate-sgm", "SGM versus random masking");
  ablate->add_option("--ratio", f.ratio, "temporal compression ratio")->check(CLI::IsMember({2, 4, 8}));
  auto* probe = add_eval("probe", "linear probe on raw and compressed tokens");
  probe->add_option("--checkpoint", f.checkpoint, "trained model");
  auto* sweep = add_eval("selector-sweep", "retention across selector keep rates");
  sweep->add_option("--selector", f.selector, "trained selector");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every trainable parameter");
  add_common(grad);
  grad->add_option("--ratio", f.ratio, "temporal compression ratio")->check(CLI::IsMember({2, 4, 8}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(f, out);
    if (prune->parsed()) return cmd_prune(f, out);
    if (needle->parsed()) return cmd_eval_needle(f, out);
    if (ablate->parsed()) return cmd_eval_ablate(f, out);
    if (probe->parsed()) return cmd_eval_probe(f, out);
    if (sweep->parsed()) return cmd_eval_selector_sweep(f, out);
    if (grad->parsed()) return cmd_gradcheck(f, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "dimension mismatch: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "bad input file: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartialFailure;
  }
  return kExitConfig;
}

}  // namespace recot
