#include "loopscope/loopdetect.hpp"

#include <algorithm>

#include "loopscope/error.hpp"

namespace loopscope {

namespace {

bool tail_blocks_match(std::span<const TokenId> x, std::size_t period) {
  const std::size_t n = x.size();
  return std::equal(x.begin() + (n - 2 * period), x.begin() + (n - period), x.begin() + (n - period));
}

// Earliest start from which x[j] == x[j + period] holds up to the end. Every
// block from there on then equals the same rotation of the last full block
// (a trailing partial block matches a prefix of it).
std::size_t earliest_loop_start(std::span<const TokenId> x, std::size_t period) {
  std::size_t start = x.size() - period;
  while (start > 0 && x[start - 1] == x[start - 1 + period]) --start;
  return start;
}

}  // namespace

std::optional<LoopSpec> detect_loop(std::span<const TokenId> tokens) {
  const std::size_t n = tokens.size();
  if (n < 2) return std::nullopt;
  const std::size_t half = n / 2;

  std::optional<std::size_t> period;
  for (std::size_t lambda = 4; lambda <= half && !period; ++lambda) {
    if (tail_blocks_match(tokens, lambda)) period = lambda;
  }
  for (std::size_t lambda = 1; lambda <= std::min<std::size_t>(3, half) && !period; ++lambda) {
    if (tail_blocks_match(tokens, lambda)) period = lambda;
  }
  if (!period) return std::nullopt;

  LoopSpec loop;
  loop.period = *period;
  loop.rho = earliest_loop_start(tokens, loop.period);
  loop.looping_tokens.assign(tokens.begin() + loop.rho, tokens.begin() + loop.rho + loop.period);
  loop.rotated_tokens = loop.looping_tokens;
  return loop;
}

std::optional<LoopSpec> detect_continuation_loop(const Passage& passage) {
  auto loop = detect_loop(passage.continuation());
  if (loop) loop->rho += passage.condition_len;
  return loop;
}

double loop_rate(std::span<const Passage> passages) {
  if (passages.empty()) throw UsageError("loop_rate: empty collection");
  std::size_t looping = 0;
  for (const Passage& p : passages) {
    if (detect_continuation_loop(p)) ++looping;
  }
  return static_cast<double>(looping) / static_cast<double>(passages.size());
}

bool SentenceTerminals::is_terminal(std::string_view token_text) const {
  return std::any_of(marks.begin(), marks.end(), [&](const std::string& mark) {
    return !mark.empty() && token_text.find(mark) != std::string_view::npos;
  });
}

std::vector<TokenId> rotate_to_sentence_start(const LoopSpec& loop, const TokenText& text_of,
                                              const SentenceTerminals& terminals) {
  const auto& block = loop.looping_tokens;
  for (std::size_t i = block.size(); i-- > 0;) {
    if (!terminals.is_terminal(text_of(block[i]))) continue;
    std::vector<TokenId> rotated(block.begin() + static_cast<std::ptrdiff_t>(i + 1), block.end());
    rotated.insert(rotated.end(), block.begin(), block.begin() + static_cast<std::ptrdiff_t>(i + 1));
    return rotated;
  }
  return block;
}

}  // namespace loopscope
