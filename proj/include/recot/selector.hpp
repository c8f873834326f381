#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "recot/binder.hpp"
#include "recot/optim.hpp"
#include "recot/rng.hpp"

namespace recot {

struct SelectorConfig {
  std::size_t query_dim = 64;  // hashed trigram buckets
  std::size_t hidden = 64;
  std::size_t token_dim = 32;
  double temperature = 1.0;
  std::uint64_t seed = 0;  // hash salt and MLP init

  void validate() const;
};

// Frozen trigram embedder in front of a trainable two-layer GELU MLP that
// maps the query into token space.
struct SelectorModel {
  SelectorConfig config;
  Tensor w1;  // [Dq x H]
  Tensor b1;  // [H]
  Tensor w2;  // [H x D]
  Tensor b2;  // [D]

  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
};

SelectorModel init_selector(const SelectorConfig& config);

// L2-normalised bag of hashed character trigrams of "^text$".
Tensor embed_query(const std::string& text, const SelectorModel& model);

// MLP(query) as a [D] vector.
Tensor query_projection(const Tensor& query_embedding, const SelectorModel& model);

// Graph form: logits[M] = tokens[M x D] . MLP(query) / tau.
Var selector_logits(Var query_embedding, Var tokens, const SelectorModel& model, ParamBinder& bind);

// softmax over M of <MLP(query), token_j> / tau.
std::vector<double> score_tokens(const Tensor& query_embedding, const Tensor& tokens, const SelectorModel& model);

struct SelectionResult {
  std::vector<std::size_t> kept;  // ascending
  std::vector<double> scores;
  double keep_rate = 1.0;
  bool activated = false;
};

// Keeps the `budget` best-scoring tokens (ties to the lower index) in original
// order; a no-op when the sequence already fits.
SelectionResult select_tokens(std::span<const double> scores, std::size_t budget);
// Rows of a [M x D] tensor, in the given order.
Tensor gather_rows(const Tensor& tokens, std::span<const std::size_t> rows);

enum class DropMode { lowest_score, uniform };

struct DropResult {
  std::vector<std::size_t> kept;  // ascending
  double rho = 0.0;               // drawn drop rate
  double dropped_fraction = 0.0;  // dropped / M
};

inline constexpr double kMinTrainDrop = 0.05;
inline constexpr double kMaxTrainDrop = 0.30;

// Draws rho ~ U[0.05, 0.30] and drops round(rho * M) tokens: the lowest
// scoring ones (ties sampled uniformly) or, in uniform mode, any.
DropResult train_drop(std::span<const double> scores, Rng& rng, DropMode mode = DropMode::lowest_score);

struct SelectorExample {
  std::string query;
  Tensor tokens;                       // [M x D]
  std::vector<std::uint8_t> relevant;  // [M]
};

struct SelectorTrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  double learning_rate = 1e-2;
  bool random_drop = true;
  std::uint64_t seed = 0;
};

// Cross-entropy between the score distribution and the normalised relevance
// mask, minimised with Adam. Returns the per-step mean loss.
std::vector<double> train_selector(const std::vector<SelectorExample>& examples, SelectorModel& model,
                                   const SelectorTrainConfig& config);

// Mean fraction of relevant tokens that survive selection at the given keep rate.
double selector_recall(const std::vector<SelectorExample>& examples, const SelectorModel& model, double keep_rate);

std::size_t budget_for(double keep_rate, std::size_t tokens);

void save_selector(const std::filesystem::path& path, const SelectorModel& model);
SelectorModel load_selector(const std::filesystem::path& path);

}  // namespace recot
