#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopscope/neighborhood.hpp"
#include "loopscope/trace.hpp"

namespace loopscope {

enum class CompareMode { compare_seen, compare_unseen };

std::string_view to_string(CompareMode mode);
CompareMode parse_mode(std::string_view text);

struct ProtocolConfig {
  std::size_t layer = 0;  // index into the stored layers
  double radius = 1024.0;
  std::size_t time_window = 5;
  CurveAxis axis = CurveAxis::absolute_time;
  std::vector<long> steps;  // see CurveOptions::steps
  std::size_t folds = 10;
  std::size_t repetitions = 3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Artificial passages (with states) for one strategy.
using ArtificialSet = std::vector<CorpusEntry>;

/// Produces artificial sets, keyed by strategy name, for a conditioning set
/// of real passages. Generated passages must carry source_id.
using ArtificialProvider =
    std::function<std::map<std::string, ArtificialSet>(std::span<const CorpusEntry* const> cond)>;

/// Encodes a passage into hidden states (needed for the shuffled control).
using Encoder = std::function<StateTrace(const Passage&)>;

struct ProtocolResult {
  // Absolute mode: "real", each strategy, and "shuffled" when an encoder is
  // given. Relative mode: each strategy's own curve.
  std::map<std::string, DeviationCurve> curves;
  // Relative mode only: n(generated) - n(real) per strategy.
  std::map<std::string, DeviationCurve> differences;
  std::vector<std::vector<std::string>> support_ids;     // per repetition
  std::vector<std::vector<std::string>> evaluation_ids;  // per repetition
};

/// compare_seen: support = train split, evaluation = valid + test.
/// compare_unseen: valid + test are shuffled with the seed and cut into
/// `folds` near-equal subsets; repetition i evaluates on subset i and uses the
/// remaining subsets as support. Samples from all repetitions are pooled.
/// Throws UsageError when a needed split is empty or a passage lacks states.
ProtocolResult compare_protocol(std::span<const CorpusEntry> real, CompareMode mode,
                                const ProtocolConfig& config, const ArtificialProvider& provider,
                                const Encoder& shuffle_encoder = {});

/// Provider over pre-exported artificial corpora: picks the entries whose
/// source_id is in the conditioning set.
ArtificialProvider corpus_provider(std::map<std::string, const Corpus*> by_strategy);

}  // namespace loopscope
