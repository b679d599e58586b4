#include "loopscope/textmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>

#include "loopscope/error.hpp"
#include "loopscope/parallel.hpp"

namespace loopscope {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() < b.size()) std::swap(a, b);
  // Two rows over the shorter sequence.
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::span<const std::string> reference, std::span<const std::string> candidate) {
  if (reference.empty() || candidate.empty()) throw UsageError("rouge_l: empty input");
  const double lcs = static_cast<double>(lcs_length(reference, candidate));
  RougeScore s;
  if (lcs == 0.0) return s;
  s.precision = lcs / static_cast<double>(candidate.size());
  s.recall = lcs / static_cast<double>(reference.size());
  s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

RougeScore rouge_l(std::string_view reference, std::string_view candidate) {
  const auto ref = split_words(reference);
  const auto cand = split_words(candidate);
  return rouge_l(std::span<const std::string>(ref), std::span<const std::string>(cand));
}

std::string_view to_string(ConditionClass cls) {
  switch (cls) {
    case ConditionClass::looping_sequence: return "looping_sequence";
    case ConditionClass::first_sentence: return "first_sentence";
    case ConditionClass::last_sentence: return "last_sentence";
  }
  return "looping_sequence";
}

namespace {

struct Score {
  RougeScore value;
  bool ok = false;
};

// Scores one condition; `target` is the x the continuation is compared to.
Score score_condition(const std::vector<TokenId>& condition, const std::vector<TokenId>& target,
                      const ProbabilitySource& model, DecodeConfig config, const Renderer& render) {
  config.max_new_tokens = target.size();
  try {
    const Passage generated = generate(model, condition, config);
    const auto continuation = generated.continuation().first(target.size());
    const auto ref = split_words(render(target));
    const auto cand = split_words(render(continuation));
    if (ref.empty() || cand.empty()) return {};
    return {rouge_l(std::span<const std::string>(ref), std::span<const std::string>(cand)), true};
  } catch (const Error& e) {
    std::cerr << "inducingness: skipping condition: " << e.what() << '\n';
    return {};
  }
}

InducingnessReport summarize(ConditionClass cls, int repeats, const std::vector<Score>& scores) {
  InducingnessReport r;
  r.condition_class = cls;
  r.repeats = repeats;
  double sum = 0.0, precision = 0.0, recall = 0.0;
  for (const Score& s : scores) {
    if (!s.ok) {
      ++r.skipped;
      continue;
    }
    sum += s.value.f1;
    precision += s.value.precision;
    recall += s.value.recall;
    ++r.n;
  }
  if (r.n == 0) return r;
  const double n = static_cast<double>(r.n);
  r.mean = sum / n;
  r.mean_precision = precision / n;
  r.mean_recall = recall / n;
  double ss = 0.0;
  for (const Score& s : scores) {
    if (s.ok) ss += (s.value.f1 - r.mean) * (s.value.f1 - r.mean);
  }
  r.std = std::sqrt(ss / static_cast<double>(r.n));
  return r;
}

std::vector<InducingnessReport> run_harness(std::span<const TokenId> context,
                                            const ConditionSets& conditions, int min_repeats,
                                            int max_repeats, const ProbabilitySource& model,
                                            const DecodeConfig& config, const Renderer& render,
                                            std::size_t workers) {
  config.validate();
  std::vector<InducingnessReport> out;
  for (const auto& [cls, xs] : conditions) {
    if (xs.empty()) {
      throw UsageError("inducingness: no conditions for class " + std::string(to_string(cls)));
    }
    for (int repeats = min_repeats; repeats <= max_repeats; ++repeats) {
      std::vector<Score> scores(xs.size());
      parallel_for(xs.size(), workers, [&](std::size_t j) {
        const auto& x = xs[j];
        if (x.empty()) return;
        std::vector<TokenId> condition(context.begin(), context.end());
        for (int r = 0; r < std::max(repeats, 1); ++r) condition.insert(condition.end(), x.begin(), x.end());
        DecodeConfig c = config;
        c.seed = passage_seed(config.seed, j);
        scores[j] = score_condition(condition, x, model, c, render);
      });
      out.push_back(summarize(cls, repeats, scores));
    }
  }
  return out;
}

}  // namespace

std::vector<InducingnessReport> inducingness_simple(const ConditionSets& conditions,
                                                    const ProbabilitySource& model,
                                                    const DecodeConfig& config,
                                                    const Renderer& render, std::size_t workers) {
  return run_harness({}, conditions, 0, 0, model, config, render, workers);
}

std::vector<InducingnessReport> inducingness_repeated(std::span<const TokenId> context,
                                                      const ConditionSets& conditions,
                                                      int max_repeats,
                                                      const ProbabilitySource& model,
                                                      const DecodeConfig& config,
                                                      const Renderer& render,
                                                      std::size_t workers) {
  if (max_repeats < 1) throw UsageError("inducingness_repeated: max_repeats must be >= 1");
  return run_harness(context, conditions, 1, max_repeats, model, config, render, workers);
}

std::vector<std::vector<TokenId>> split_sentences(std::span<const TokenId> tokens,
                                                  const TerminalTest& is_terminal) {
  std::vector<std::vector<TokenId>> sentences;
  std::vector<TokenId> current;
  for (TokenId t : tokens) {
    current.push_back(t);
    if (is_terminal(t)) {
      sentences.push_back(std::move(current));
      current.clear();
    }
  }
  return sentences;
}

}  // namespace loopscope
