#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loopscope/rng.hpp"
#include "loopscope/trace.hpp"

namespace loopscope {

struct MaskedQuery {
  std::string_view passage_id;
  std::size_t repetition = 0;
  std::span<const TokenId> tokens;
  std::span<const std::size_t> positions;  // ascending
};

/// Masked-LM scorer: log-likelihood (<= 0) of the original token at each
/// masked position, in the order of query.positions.
class MaskedScorer {
 public:
  virtual ~MaskedScorer() = default;
  virtual std::vector<double> score(const MaskedQuery& query) const = 0;
};

/// Every token gets -log(vocab_size).
class UniformScorer : public MaskedScorer {
 public:
  explicit UniformScorer(std::size_t vocab_size);
  std::vector<double> score(const MaskedQuery& query) const override;

 private:
  double loglik_;
};

/// Replays a score file: JSONL records
///   {"passage_id": str, "repetition": int, "positions": [int], "loglik": [float]}
/// The requested positions must equal the recorded ones.
class ScoreFileScorer : public MaskedScorer {
 public:
  explicit ScoreFileScorer(const std::filesystem::path& path);
  std::vector<double> score(const MaskedQuery& query) const override;

 private:
  struct Record {
    std::vector<std::size_t> positions;
    std::vector<double> loglik;
  };
  std::map<std::pair<std::string, std::size_t>, Record> records_;
};

/// ceil(fraction * length), with products within 1e-9 of an integer taken as
/// that integer.
std::size_t mask_count(std::size_t length, double fraction);

/// Draws mask_count(length, fraction) distinct positions with a partial
/// Fisher-Yates pass over [0, length): for i in [0, k) swap slot i with slot
/// i + uniform_below(length - i). Returned sorted ascending.
std::vector<std::size_t> select_mask_positions(std::size_t length, double fraction, Rng& rng);

/// Stream seed for a passage's masking: seed ^ fnv1a(passage_id).
/// Repetitions draw consecutively from that stream.
inline std::uint64_t mask_seed(std::uint64_t seed, std::string_view passage_id) {
  return seed ^ fnv1a(passage_id);
}

struct LikelihoodPoint {
  std::size_t step = 0;
  double mean = 0.0;
  std::size_t n = 0;  // samples; 0 when never masked
};

/// Per-step mean masked log-likelihood over repetitions and passages.
/// Passages are processed in id order so the result does not depend on input
/// order. A failed scorer call is retried once, then the run aborts.
std::vector<LikelihoodPoint> masked_likelihood_curve(std::span<const Passage> passages,
                                                     const MaskedScorer& scorer,
                                                     double mask_fraction, std::size_t repetitions,
                                                     std::uint64_t seed);

}  // namespace loopscope
