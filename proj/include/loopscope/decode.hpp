#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "loopscope/rng.hpp"
#include "loopscope/trace.hpp"

namespace loopscope {

/// Probability vector over the vocabulary for one decoding step.
/// Entries are non-negative and sum to 1 within kSumTolerance.
class StepDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  // Throws UsageError if the vector is empty, has a negative or non-finite
  // entry, or does not sum to 1.
  explicit StepDistribution(std::vector<double> probs);

  static StepDistribution from_logits(std::span<const float> logits);

  std::span<const double> probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

  bool operator==(const StepDistribution&) const = default;

 private:
  std::vector<double> probs_;
};

enum class Strategy { greedy, sample, top_k, nucleus };

std::string_view to_string(Strategy strategy);
Strategy parse_strategy(std::string_view text);

struct DecodeConfig {
  static constexpr std::size_t kDefaultMaxNewTokens = 462;  // 512 - 50

  Strategy strategy = Strategy::greedy;
  std::optional<std::size_t> k;  // top_k only
  std::optional<double> p;       // nucleus only
  std::size_t max_new_tokens = kDefaultMaxNewTokens;
  std::uint64_t seed = 0;

  // k present iff top_k (k >= 1), p present iff nucleus (0 < p <= 1).
  void validate() const;
  // Short label used in file names, e.g. "greedy", "top_k40", "nucleus0.9".
  std::string tag() const;

  nlohmann::json to_json() const;
  static DecodeConfig from_json(const nlohmann::json& j);
};

/// Zeroes the mass the strategy excludes and renormalizes the rest.
/// greedy and sample pass through unchanged. top_k keeps the k most probable
/// tokens (ties at the boundary go to the lower id; k is clamped to the
/// vocabulary). nucleus keeps the shortest descending-probability prefix whose
/// mass reaches p. When nothing with positive mass is dropped the input is
/// returned as is.
StepDistribution restrict(const StepDistribution& dist, const DecodeConfig& config);

/// Greedy returns the argmax (lowest id on ties); the sampling strategies draw
/// once from restrict(dist, config).
TokenId select(const StepDistribution& dist, const DecodeConfig& config, Rng& rng);

/// Any autoregressive model. Implementations must be safe to call from
/// several threads at once.
class ProbabilitySource {
 public:
  virtual ~ProbabilitySource() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual StepDistribution next_distribution(std::span<const TokenId> prefix) const = 0;
};

/// Appends max_new_tokens selected tokens to the condition. The stream is
/// seeded with config.seed. Model exceptions are rethrown as GenerationError
/// carrying the step index.
Passage generate(const ProbabilitySource& model, std::span<const TokenId> condition,
                 const DecodeConfig& config, std::string id = {});

/// Conditions on the first condition_len tokens of each source passage and
/// generates one continuation per source, in parallel. Passage i uses seed
/// config.seed ^ i and gets id "<source id>/<config tag>".
std::vector<Passage> generate_continuations(const ProbabilitySource& model,
                                            std::span<const Passage> sources,
                                            std::size_t condition_len, const DecodeConfig& config,
                                            std::size_t workers);

/// Serves stored per-step logits of one exported passage. The prefix must be
/// a prefix of the stored tokens; anything else is a model failure.
class LogitsReplaySource : public ProbabilitySource {
 public:
  LogitsReplaySource(const Passage& passage, const StateTrace& logits);

  std::size_t vocab_size() const override { return logits_->dim(); }
  StepDistribution next_distribution(std::span<const TokenId> prefix) const override;

 private:
  const Passage* passage_;
  const StateTrace* logits_;
};

}  // namespace loopscope
