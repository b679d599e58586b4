#include "loopscope/toylm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "loopscope/error.hpp"
#include "loopscope/rng.hpp"

using nlohmann::json;

namespace loopscope {

void ToyLMSpec::validate() const {
  if (vocab_size < 2) throw UsageError("toy LM: vocab_size must be >= 2");
  if (vocab_size > 1024) throw UsageError("toy LM: vocab_size above 1024 is not supported");
  if (!(beta >= 0.0 && beta < 1.0)) throw UsageError("toy LM: beta must lie in [0, 1)");
  if (window < 2) throw UsageError("toy LM: window must be >= 2");
  if (state_dim == 0) throw UsageError("toy LM: state_dim must be positive");
  if (!(sharpness > 0.0)) throw UsageError("toy LM: sharpness must be positive");
  if (!(typicality >= 0.0)) throw UsageError("toy LM: typicality must be non-negative");
  if (num_terminals >= vocab_size) throw UsageError("toy LM: num_terminals must be < vocab_size");
}

json ToyLMSpec::to_json() const {
  return json{{"type", "toy"},
              {"seed", seed},
              {"vocab_size", vocab_size},
              {"beta", beta},
              {"window", window},
              {"state_dim", state_dim},
              {"sharpness", sharpness},
              {"typicality", typicality},
              {"num_terminals", num_terminals}};
}

ToyLMSpec ToyLMSpec::from_json(const json& j) {
  ToyLMSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.beta = j.value("beta", s.beta);
    s.window = j.value("window", s.window);
    s.state_dim = j.value("state_dim", s.state_dim);
    s.sharpness = j.value("sharpness", s.sharpness);
    s.typicality = j.value("typicality", s.typicality);
    s.num_terminals = j.value("num_terminals", s.num_terminals);
  } catch (const json::exception& e) {
    throw UsageError(std::string("toy LM spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

// Open interval (0, 1), so powers and logs stay finite.
double open_uniform(Rng& rng) {
  return (static_cast<double>(rng.next() >> 11) + 0.5) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  const double u1 = open_uniform(rng);
  const double u2 = open_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

SelfReinforcingLM::SelfReinforcingLM(ToyLMSpec spec) : spec_(spec) {
  spec_.validate();
  const std::size_t v = spec_.vocab_size;

  Rng base_rng(stage_seed(spec_.seed, "toylm/base"));
  base_.resize(v * v);
  for (std::size_t u = 0; u < v; ++u) {
    double total = 0.0;
    for (std::size_t w = 0; w < v; ++w) {
      const double x = std::pow(open_uniform(base_rng), spec_.sharpness);
      base_[u * v + w] = x;
      total += x;
    }
    for (std::size_t w = 0; w < v; ++w) base_[u * v + w] /= total;
  }

  Rng proj_rng(stage_seed(spec_.seed, "toylm/projection"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.state_dim));
  direction_.resize(spec_.state_dim);
  double norm_sq = 0.0;
  for (double& x : direction_) {
    x = standard_normal(proj_rng);
    norm_sq += x * x;
  }
  for (double& x : direction_) x /= std::sqrt(norm_sq);

  const std::size_t d = spec_.state_dim;
  projection_.resize(v * v * d);
  for (std::size_t column = 0; column < v * v; ++column) {
    const double typical = spec_.typicality * std::log(static_cast<double>(v) * base_[column]);
    for (std::size_t k = 0; k < d; ++k) {
      projection_[column * d + k] =
          static_cast<float>(standard_normal(proj_rng) * scale + typical * direction_[k]);
    }
  }
}

std::span<const double> SelfReinforcingLM::base_row(TokenId u) const {
  if (u >= spec_.vocab_size) throw UsageError("token " + std::to_string(u) + " outside vocabulary");
  return std::span<const double>(base_).subspan(u * spec_.vocab_size, spec_.vocab_size);
}

std::span<const float> SelfReinforcingLM::projection_column(TokenId u, TokenId v) const {
  const std::size_t column = static_cast<std::size_t>(u) * spec_.vocab_size + v;
  return std::span<const float>(projection_).subspan(column * spec_.state_dim, spec_.state_dim);
}

StepDistribution SelfReinforcingLM::next_distribution(std::span<const TokenId> prefix) const {
  if (prefix.empty()) throw UsageError("toy LM: empty prefix");
  for (TokenId t : prefix) {
    if (t >= spec_.vocab_size) {
      throw UsageError("toy LM: token " + std::to_string(t) + " outside vocabulary");
    }
  }
  const std::size_t n = prefix.size();
  const TokenId last = prefix.back();
  const auto base = base_row(last);
  std::vector<double> probs(base.begin(), base.end());

  const std::size_t start = n > spec_.window ? n - spec_.window : 0;
  std::vector<std::pair<TokenId, std::size_t>> continuations;
  std::size_t total = 0;
  for (std::size_t j = start; j + 1 < n; ++j) {
    if (prefix[j] != last) continue;
    const TokenId next = prefix[j + 1];
    auto it = std::find_if(continuations.begin(), continuations.end(),
                           [&](const auto& c) { return c.first == next; });
    if (it == continuations.end()) {
      continuations.emplace_back(next, 1);
    } else {
      ++it->second;
    }
    ++total;
  }
  if (total == 0 || spec_.beta == 0.0) return StepDistribution(std::move(probs));

  for (double& p : probs) p *= 1.0 - spec_.beta;
  for (const auto& [token, count] : continuations) {
    probs[token] += spec_.beta * static_cast<double>(count) / static_cast<double>(total);
  }
  return StepDistribution(std::move(probs));
}

StateTrace SelfReinforcingLM::hidden_states(std::span<const TokenId> tokens,
                                            std::string passage_id) const {
  if (tokens.empty()) throw UsageError("toy LM: cannot encode an empty passage");
  for (TokenId t : tokens) {
    if (t >= spec_.vocab_size) {
      throw UsageError("toy LM: token " + std::to_string(t) + " outside vocabulary");
    }
  }
  const std::size_t d = spec_.state_dim;
  std::vector<float> values(tokens.size() * d, 0.0f);
  std::vector<std::uint32_t> bigrams;
  std::vector<double> acc(d);

  for (std::size_t t = 0; t < tokens.size(); ++t) {
    // Window of `window` tokens ending at t holds window - 1 bigrams.
    const std::size_t start = t + 1 > spec_.window ? t + 1 - spec_.window : 0;
    bigrams.clear();
    for (std::size_t j = start; j < t; ++j) {
      bigrams.push_back(static_cast<std::uint32_t>(tokens[j]) * spec_.vocab_size + tokens[j + 1]);
    }
    if (bigrams.empty()) continue;
    std::sort(bigrams.begin(), bigrams.end());

    // Frequencies, accumulated in sorted bigram order so the state is a
    // function of the window contents only.
    const double inv_total = 1.0 / static_cast<double>(bigrams.size());
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < bigrams.size();) {
      std::size_t j = i;
      while (j < bigrams.size() && bigrams[j] == bigrams[i]) ++j;
      const double weight = static_cast<double>(j - i) * inv_total;
      const TokenId u = static_cast<TokenId>(bigrams[i] / spec_.vocab_size);
      const TokenId v = static_cast<TokenId>(bigrams[i] % spec_.vocab_size);
      const auto column = projection_column(u, v);
      for (std::size_t k = 0; k < d; ++k) acc[k] += weight * column[k];
      i = j;
    }
    for (std::size_t k = 0; k < d; ++k) values[t * d + k] = static_cast<float>(acc[k]);
  }
  return StateTrace(std::move(passage_id), 1, tokens.size(), d, std::move(values));
}

std::string SelfReinforcingLM::word(TokenId token) const {
  if (is_terminal(token)) return ".";
  return "w" + std::to_string(token);
}

std::string SelfReinforcingLM::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

std::vector<Passage> SelfReinforcingLM::sample_passages(std::size_t count, std::size_t length,
                                                        std::uint64_t seed, Split split,
                                                        const std::string& id_prefix) const {
  if (length < 1) throw UsageError("sample_passages: length must be >= 1");
  DecodeConfig config;
  config.strategy = Strategy::sample;
  std::vector<Passage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = passage_seed(seed, i);
    Rng start_rng(stage_seed(s, "toylm/start"));
    const TokenId first = static_cast<TokenId>(start_rng.uniform_below(spec_.vocab_size));
    char id[64];
    std::snprintf(id, sizeof(id), "%s%05zu", id_prefix.c_str(), i);

    Passage p;
    if (length == 1) {
      p.id = id;
      p.tokens = {first};
    } else {
      config.max_new_tokens = length - 1;
      config.seed = s;
      const TokenId condition[] = {first};
      p = generate(*this, condition, config, id);
    }
    p.origin = Origin::real;
    p.condition_len = 0;
    p.split = split;
    p.text = render(p.tokens);
    out.push_back(std::move(p));
  }
  return out;
}

Corpus make_toy_corpus(const SelfReinforcingLM& lm, std::size_t train, std::size_t valid,
                       std::size_t test, std::size_t length, std::uint64_t seed) {
  Corpus corpus;
  corpus.vocab_size = lm.vocab_size();
  corpus.vocab = toy_vocab(lm);
  corpus.metadata = json{{"model", lm.spec().to_json()}, {"seed", seed}, {"origin", "real"}};
  const std::pair<Split, std::size_t> parts[] = {
      {Split::train, train}, {Split::valid, valid}, {Split::test, test}};
  for (const auto& [split, count] : parts) {
    const std::string name(to_string(split));
    for (Passage& p : lm.sample_passages(count, length, stage_seed(seed, "corpus/" + name), split,
                                         name + "-")) {
      StateTrace states = lm.hidden_states(p.tokens, p.id);
      corpus.entries.push_back(CorpusEntry{std::move(p), std::move(states), std::nullopt});
    }
  }
  return corpus;
}

std::vector<std::string> toy_vocab(const SelfReinforcingLM& lm) {
  std::vector<std::string> vocab(lm.vocab_size());
  for (std::size_t t = 0; t < vocab.size(); ++t) vocab[t] = " " + lm.word(static_cast<TokenId>(t));
  return vocab;
}

}  // namespace loopscope
