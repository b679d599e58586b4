#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopscope/decode.hpp"
#include "loopscope/trace.hpp"

namespace loopscope {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Sentence-level ROUGE-L: precision = LCS/|candidate|, recall =
/// LCS/|reference|, F1 their harmonic mean. Throws UsageError on empty input.
RougeScore rouge_l(std::span<const std::string> reference, std::span<const std::string> candidate);

/// Lowercases and splits on whitespace, then scores word sequences.
RougeScore rouge_l(std::string_view reference, std::string_view candidate);

std::vector<std::string> split_words(std::string_view text);

enum class ConditionClass { looping_sequence, first_sentence, last_sentence };

std::string_view to_string(ConditionClass cls);

struct InducingnessReport {
  ConditionClass condition_class = ConditionClass::looping_sequence;
  int repeats = 0;  // 0 for the plain (unrepeated, no context) harness
  double mean = 0.0;  // F1
  double std = 0.0;   // population
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  std::size_t n = 0;
  std::size_t skipped = 0;
};

using ConditionSets = std::map<ConditionClass, std::vector<std::vector<TokenId>>>;
using Renderer = std::function<std::string(std::span<const TokenId>)>;

/// For each condition x: generate from x, score rouge_l(x, first |x| generated
/// tokens) on rendered words, and aggregate per class. Condition j of a class
/// uses decode seed config.seed ^ j. Failed generations are skipped and
/// counted.
std::vector<InducingnessReport> inducingness_simple(const ConditionSets& conditions,
                                                    const ProbabilitySource& model,
                                                    const DecodeConfig& config,
                                                    const Renderer& render, std::size_t workers);

/// Same measurement with condition c ++ x repeated 1..max_repeats times.
std::vector<InducingnessReport> inducingness_repeated(std::span<const TokenId> context,
                                                      const ConditionSets& conditions,
                                                      int max_repeats,
                                                      const ProbabilitySource& model,
                                                      const DecodeConfig& config,
                                                      const Renderer& render,
                                                      std::size_t workers);

using TerminalTest = std::function<bool(TokenId)>;

/// Sentences end at (and include) a terminal token. A trailing fragment
/// without a terminal is not a sentence.
std::vector<std::vector<TokenId>> split_sentences(std::span<const TokenId> tokens,
                                                  const TerminalTest& is_terminal);

}  // namespace loopscope
