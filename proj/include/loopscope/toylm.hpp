#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "loopscope/decode.hpp"
#include "loopscope/trace.hpp"

namespace loopscope {

struct ToyLMSpec {
  std::uint64_t seed = 7;
  std::size_t vocab_size = 256;
  // Weight of the in-window continuation statistics, in [0, 1).
  double beta = 0.3;
  std::size_t window = 64;
  std::size_t state_dim = 32;
  // Base rows are normalized u^sharpness with u ~ U(0,1); larger values give
  // peakier bigram rows.
  double sharpness = 4.0;
  // Weight of the shared typicality direction in the projection columns.
  double typicality = 1.0;
  // Token ids below this render as ".", the rest as "w<id>".
  std::size_t num_terminals = 8;

  void validate() const;
  nlohmann::json to_json() const;
  static ToyLMSpec from_json(const nlohmann::json& j);
};

/// Bigram model whose next-token distribution is pulled toward whatever
/// followed the current token earlier in a trailing window:
///
///   P(v | prefix) = (1 - beta) * base[u][v] + beta * emp_u(v)
///
/// where u is the last token and emp_u the empirical distribution of tokens
/// that followed u inside the last `window` tokens (base row alone when u has
/// no such continuation). Repeating a pair therefore makes it more likely.
///
/// Hidden state at step t is a fixed random projection of the bigram
/// frequencies inside the window of `window` tokens ending at t. Column (u, v)
/// of the projection is z_uv + typicality * log(V * base[u][v]) * m, with z_uv
/// i.i.d. N(0, I/D) and m a fixed random unit vector, so states also encode
/// how typical the window's transitions are under the base table.
class SelfReinforcingLM : public ProbabilitySource {
 public:
  explicit SelfReinforcingLM(ToyLMSpec spec);

  const ToyLMSpec& spec() const { return spec_; }
  std::size_t vocab_size() const override { return spec_.vocab_size; }
  std::span<const double> base_row(TokenId u) const;

  StepDistribution next_distribution(std::span<const TokenId> prefix) const override;

  StateTrace hidden_states(std::span<const TokenId> tokens, std::string passage_id) const;

  std::string word(TokenId token) const;
  std::string render(std::span<const TokenId> tokens) const;
  bool is_terminal(TokenId token) const { return token < spec_.num_terminals; }

  /// Ancestral samples of `length` tokens used as the toy "real" corpus.
  /// Passage i starts from a uniform token and uses stream seed ^ i.
  std::vector<Passage> sample_passages(std::size_t count, std::size_t length, std::uint64_t seed,
                                       Split split, const std::string& id_prefix) const;

 private:
  std::span<const float> projection_column(TokenId u, TokenId v) const;

  ToyLMSpec spec_;
  std::vector<double> base_;        // vocab x vocab, row-stochastic
  std::vector<float> projection_;   // (vocab*vocab) columns of state_dim
  std::vector<double> direction_;   // m, unit length
};

/// Real toy corpus with train/valid/test splits and hidden states attached.
Corpus make_toy_corpus(const SelfReinforcingLM& lm, std::size_t train, std::size_t valid,
                       std::size_t test, std::size_t length, std::uint64_t seed);

/// Token strings of the toy vocabulary, for Corpus::vocab.
std::vector<std::string> toy_vocab(const SelfReinforcingLM& lm);

}  // namespace loopscope
