#include "recot/selector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "recot/container.hpp"
#include "recot/errors.hpp"

namespace recot {

void SelectorConfig::validate() const {
  if (query_dim == 0 || hidden == 0 || token_dim == 0) throw ConfigError("selector: dimensions must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("selector: temperature must be > 0");
}

std::vector<std::pair<std::string, Tensor*>> SelectorModel::parameters() {
  return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

std::vector<std::pair<std::string, const Tensor*>> SelectorModel::parameters() const {
  return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
}

SelectorModel init_selector(const SelectorConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 11));
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
  };
  SelectorModel m;
  m.config = config;
  m.w1 = uniform({config.query_dim, config.hidden}, config.query_dim);
  m.b1 = Tensor({config.hidden}, 0.0);
  m.w2 = uniform({config.hidden, config.token_dim}, config.hidden);
  m.b2 = Tensor({config.token_dim}, 0.0);
  return m;
}

Tensor embed_query(const std::string& text, const SelectorModel& model) {
  if (text.empty()) throw UsageError("embed_query: empty query text");
  const std::string padded = "^" + text + "$";
  const std::size_t dq = model.config.query_dim;
  Tensor out({dq}, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (std::size_t k = 0; k < 3; ++k) {
      h ^= static_cast<unsigned char>(padded[i + k]);
      h *= 1099511628211ull;
    }
    h = mix_seed(h, model.config.seed);
    out[h % dq] += (h >> 63) ? 1.0 : -1.0;
  }
  double norm = 0.0;
  for (double v : out.values()) norm += v * v;
  if (norm == 0.0) {
    // Every trigram cancelled out; fall back to a fixed unit vector.
    out[0] = 1.0;
    return out;
  }
  norm = std::sqrt(norm);
  for (double& v : out.values()) v /= norm;
  return out;
}

namespace {

Var mlp(Var q, const SelectorModel& m, ParamBinder& bind) {
  const std::size_t dq = m.config.query_dim;
  if (q.shape() != Shape{dq}) {
    throw DimensionError("selector: query embedding " + shape_string(q.shape()) + ", expected [" +
                         std::to_string(dq) + "]");
  }
  Var row = reshape(q, {1, dq});
  Var h = gelu(add_lastdim(matmul(row, bind(m.w1)), bind(m.b1)));
  return add_lastdim(matmul(h, bind(m.w2)), bind(m.b2));  // [1 x D]
}

}  // namespace

Tensor query_projection(const Tensor& query_embedding, const SelectorModel& model) {
  Tape tape;
  ParamBinder bind(tape, false);
  return mlp(tape.constant(query_embedding), model, bind).value().reshaped({model.config.token_dim});
}

Var selector_logits(Var query_embedding, Var tokens, const SelectorModel& model, ParamBinder& bind) {
  const std::size_t d = model.config.token_dim;
  if (tokens.shape().size() != 2 || tokens.shape()[1] != d) {
    throw DimensionError("selector: tokens " + shape_string(tokens.shape()) + " do not have dim " +
                         std::to_string(d));
  }
  Var key = mlp(query_embedding, model, bind);                  // [1 x D]
  Var logits = matmul(key, permute(tokens, {1, 0}));            // [1 x M]
  return scale(reshape(logits, {tokens.shape()[0]}), 1.0 / model.config.temperature);
}

std::vector<double> score_tokens(const Tensor& query_embedding, const Tensor& tokens, const SelectorModel& model) {
  Tape tape;
  ParamBinder bind(tape, false);
  Var logits = selector_logits(tape.constant(query_embedding), tape.constant(tokens), model, bind);
  const auto v = softmax_lastdim(logits).value().values();
  return {v.begin(), v.end()};
}

SelectionResult select_tokens(std::span<const double> scores, std::size_t budget) {
  if (budget == 0) throw UsageError("select_tokens: budget must be >= 1");
  const std::size_t m = scores.size();
  SelectionResult r;
  r.scores.assign(scores.begin(), scores.end());
  if (m <= budget) {
    r.kept.resize(m);
    std::iota(r.kept.begin(), r.kept.end(), 0);
    r.keep_rate = 1.0;
    return r;
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(budget), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  r.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(budget));
  std::sort(r.kept.begin(), r.kept.end());
  r.keep_rate = static_cast<double>(budget) / static_cast<double>(m);
  r.activated = true;
  return r;
}

Tensor gather_rows(const Tensor& tokens, std::span<const std::size_t> rows) {
  if (tokens.rank() != 2) throw DimensionError("gather_rows: expected [M x D], got " + shape_string(tokens.shape()));
  if (rows.empty()) throw UsageError("gather_rows: no rows requested");
  const std::size_t d = tokens.dim(1);
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (std::size_t r : rows) {
    if (r >= tokens.dim(0)) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range");
    const auto v = tokens.values();
    out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(r * d),
               v.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
  }
  return Tensor({rows.size(), d}, std::move(out));
}

DropResult train_drop(std::span<const double> scores, Rng& rng, DropMode mode) {
  const std::size_t m = scores.size();
  if (m == 0) throw UsageError("train_drop: no tokens");
  DropResult r;
  r.rho = rng.uniform(kMinTrainDrop, kMaxTrainDrop);
  const std::size_t drop = static_cast<std::size_t>(std::llround(r.rho * static_cast<double>(m)));
  std::vector<std::uint8_t> dropped(m, 0);
  if (mode == DropMode::uniform) {
    for (std::size_t k : rng.sample_without_replacement(m, drop)) dropped[k] = 1;
  } else {
    // Random tie order first, then a stable sort by score.
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    for (std::size_t k = 0; k < drop; ++k) dropped[order[k]] = 1;
  }
  for (std::size_t k = 0; k < m; ++k) {
    if (!dropped[k]) r.kept.push_back(k);
  }
  r.dropped_fraction = static_cast<double>(drop) / static_cast<double>(m);
  return r;
}

std::vector<double> train_selector(const std::vector<SelectorExample>& examples, SelectorModel& model,
                                   const SelectorTrainConfig& config) {
  if (examples.empty()) throw UsageError("train_selector: no examples");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (e.tokens.rank() != 2 || e.relevant.size() != e.tokens.dim(0)) {
      throw DimensionError("train_selector: example " + std::to_string(i) + " relevance mask does not match tokens");
    }
    if (std::none_of(e.relevant.begin(), e.relevant.end(), [](std::uint8_t v) { return v != 0; })) {
      throw UsageError("train_selector: example " + std::to_string(i) + " has no relevant token");
    }
  }
  if (config.steps == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0)) {
    throw ConfigError("train_selector: steps, batch_size and learning_rate must be positive");
  }

  std::vector<Tensor> embeddings;
  for (const auto& e : examples) embeddings.push_back(embed_query(e.query, model));

  Rng rng(mix_seed(config.seed, 21));
  std::vector<const Tensor*> cparams;
  for (const auto& [name, t] : std::as_const(model).parameters()) cparams.push_back(t);
  AdamState adam = AdamState::zeros_like(cparams);
  std::vector<double> history;
  for (std::size_t step = 0; step < config.steps; ++step) {
    auto batch = rng.sample_without_replacement(examples.size(), std::min(config.batch_size, examples.size()));
    std::sort(batch.begin(), batch.end());
    Tape tape;
    ParamBinder bind(tape, true);
    Var total;
    std::size_t used = 0;
    for (std::size_t idx : batch) {
      const SelectorExample& e = examples[idx];
      std::vector<std::size_t> rows(e.tokens.dim(0));
      std::iota(rows.begin(), rows.end(), 0);
      if (config.random_drop) {
        const auto scores = score_tokens(embeddings[idx], e.tokens, model);
        rows = train_drop(scores, rng).kept;
      }
      Tensor target({1, rows.size()}, 0.0);
      double relevant = 0.0;
      for (std::size_t k = 0; k < rows.size(); ++k) relevant += e.relevant[rows[k]] ? 1.0 : 0.0;
      if (relevant == 0.0) continue;
      for (std::size_t k = 0; k < rows.size(); ++k) target[k] = e.relevant[rows[k]] ? 1.0 / relevant : 0.0;
      Tensor tokens = rows.size() == e.tokens.dim(0) ? e.tokens : gather_rows(e.tokens, rows);
      Var logits = selector_logits(tape.constant(embeddings[idx]), tape.constant(std::move(tokens)), model, bind);
      Var loss = cross_entropy_lastdim(reshape(logits, {1, rows.size()}), tape.constant(std::move(target)));
      total = total.valid() ? add(total, loss) : loss;
      ++used;
    }
    if (used == 0) continue;
    Var loss = scale(total, 1.0 / static_cast<double>(used));
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw NumericError("train_selector: non-finite loss at step " + std::to_string(step));
    history.push_back(value);
    tape.backward(loss);
    std::vector<Tensor*> targets;
    std::vector<Tensor> grads;
    for (auto& [name, t] : model.parameters()) {
      targets.push_back(t);
      grads.push_back(bind.grad(*t));
    }
    adam_update(targets, grads, adam, lr_at(step + 1, config.steps, config.learning_rate, 0.03));
  }
  return history;
}

std::size_t budget_for(double keep_rate, std::size_t tokens) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
    throw ConfigError("keep rate must lie in (0, 1], got " + std::to_string(keep_rate));
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(keep_rate * static_cast<double>(tokens))));
}

double selector_recall(const std::vector<SelectorExample>& examples, const SelectorModel& model, double keep_rate) {
  if (examples.empty()) throw UsageError("selector_recall: no examples");
  double total = 0.0;
  for (const auto& e : examples) {
    const auto scores = score_tokens(embed_query(e.query, model), e.tokens, model);
    const auto sel = select_tokens(scores, budget_for(keep_rate, scores.size()));
    double relevant = 0.0, kept = 0.0;
    for (std::size_t k = 0; k < e.relevant.size(); ++k) relevant += e.relevant[k] ? 1.0 : 0.0;
    for (std::size_t k : sel.kept) kept += e.relevant[k] ? 1.0 : 0.0;
    total += kept / relevant;
  }
  return total / static_cast<double>(examples.size());
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_selector(const std::filesystem::path& path, const SelectorModel& model) {
  Container c;
  c.config = {{"kind", "selector"},
              {"query_dim", std::to_string(model.config.query_dim)},
              {"hidden", std::to_string(model.config.hidden)},
              {"token_dim", std::to_string(model.config.token_dim)},
              {"temperature", format_double(model.config.temperature)},
              {"seed", std::to_string(model.config.seed)}};
  for (const auto& [name, t] : model.parameters()) c.tensors.push_back({name, *t});
  write_container(path, c);
}

SelectorModel load_selector(const std::filesystem::path& path) {
  const Container c = read_container(path);
  SelectorConfig cfg;
  std::string kind;
  try {
    ConfigReader r(c.config);
    r.read("kind", kind);
    r.read("query_dim", cfg.query_dim);
    r.read("hidden", cfg.hidden);
    r.read("token_dim", cfg.token_dim);
    r.read("temperature", cfg.temperature);
    r.read("seed", cfg.seed);
    r.finish();
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::malformed, std::string("selector config: ") + e.what());
  }
  if (kind != "selector") throw FormatError(FormatError::Kind::malformed, path.string() + " is not a selector file");
  SelectorModel m = init_selector(cfg);
  for (auto& [name, t] : m.parameters()) {
    const Tensor& src = c.tensor(name);
    if (src.shape() != t->shape()) {
      throw FormatError(FormatError::Kind::malformed, "selector tensor '" + name + "' has shape " +
                                                          shape_string(src.shape()));
    }
    *t = src;
  }
  return m;
}

}  // namespace recot
