#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopscope/trace.hpp"

namespace loopscope {

/// A repetitive loop at the end of a token sequence.
///
/// tokens[rho + i*period, rho + (i+1)*period) repeat verbatim up to the end of
/// the sequence (the final block may be cut short), and at least two full
/// periods fit: rho + 2*period <= T. rho is the start of the first period and
/// rho + period the start of the first verbatim repetition.
struct LoopSpec {
  std::size_t rho = 0;
  std::size_t period = 0;
  std::vector<TokenId> looping_tokens;
  // Cyclic rotation of looping_tokens that starts at a sentence boundary.
  // Equal to looping_tokens until rotate_to_sentence_start is applied.
  std::vector<TokenId> rotated_tokens;

  bool operator==(const LoopSpec&) const = default;
};

/// Looks for a periodic suffix. Candidate periods are tried in the order
/// 4, 5, ..., T/2, then 1, 2, 3; the first period whose last two blocks match
/// wins. rho is then the earliest start from which every block matches the
/// tail under a common phase shift. Sequences shorter than 2 never loop.
std::optional<LoopSpec> detect_loop(std::span<const TokenId> tokens);

/// detect_loop on the generated part of a passage, with rho shifted back into
/// whole-passage coordinates.
std::optional<LoopSpec> detect_continuation_loop(const Passage& passage);

/// Fraction of passages whose continuation contains a loop.
/// Throws UsageError on an empty collection.
double loop_rate(std::span<const Passage> passages);

struct SentenceTerminals {
  std::vector<std::string> marks{".", "!", "?", "\n"};

  bool is_terminal(std::string_view token_text) const;
};

using TokenText = std::function<std::string(TokenId)>;

/// Rotates the loop so that it begins right after its last sentence-terminal
/// token. Returns looping_tokens unchanged when the loop has no terminal or
/// already ends with one.
std::vector<TokenId> rotate_to_sentence_start(const LoopSpec& loop, const TokenText& text_of,
                                              const SentenceTerminals& terminals = {});

}  // namespace loopscope
