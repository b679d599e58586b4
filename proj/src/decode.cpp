#include "loopscope/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "loopscope/error.hpp"
#include "loopscope/parallel.hpp"

using nlohmann::json;

namespace loopscope {

namespace {

// Neumaier-compensated sum.
double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double carry = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      carry += (sum - t) + v;
    } else {
      carry += (v - t) + sum;
    }
    sum = t;
  }
  return sum + carry;
}

// Token ids ordered by descending probability, lower id first on ties.
std::vector<std::size_t> descending_order(std::span<const double> probs) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return order;
}

// Keeps the first `keep` entries of `order`; returns the input unchanged if
// everything dropped already had zero mass.
StepDistribution keep_prefix(const StepDistribution& dist, const std::vector<std::size_t>& order,
                             std::size_t keep) {
  const auto probs = dist.probs();
  bool drops_mass = false;
  for (std::size_t i = keep; i < order.size(); ++i) {
    if (probs[order[i]] > 0.0) {
      drops_mass = true;
      break;
    }
  }
  if (!drops_mass) return dist;

  std::vector<double> out(probs.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = probs[order[i]];
  const double total = compensated_sum(out);
  for (double& v : out) v /= total;
  return StepDistribution(std::move(out));
}

}  // namespace

StepDistribution::StepDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw UsageError("StepDistribution: empty vocabulary");
  for (double v : probs_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw UsageError("StepDistribution: entries must be finite and non-negative");
    }
  }
  const double total = compensated_sum(probs_);
  if (std::abs(total - 1.0) > kSumTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "StepDistribution: entries sum to " << total;
    throw UsageError(msg.str());
  }
}

StepDistribution StepDistribution::from_logits(std::span<const float> logits) {
  if (logits.empty()) throw UsageError("from_logits: empty logits");
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
  }
  const double total = compensated_sum(probs);
  for (double& v : probs) v /= total;
  return StepDistribution(std::move(probs));
}

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::greedy: return "greedy";
    case Strategy::sample: return "sample";
    case Strategy::top_k: return "top_k";
    case Strategy::nucleus: return "nucleus";
  }
  return "greedy";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "greedy") return Strategy::greedy;
  if (text == "sample") return Strategy::sample;
  if (text == "top_k") return Strategy::top_k;
  if (text == "nucleus") return Strategy::nucleus;
  throw UsageError("unknown decoding strategy '" + std::string(text) + "'");
}

void DecodeConfig::validate() const {
  if (max_new_tokens == 0) throw UsageError("max_new_tokens must be positive");
  const bool wants_k = strategy == Strategy::top_k;
  const bool wants_p = strategy == Strategy::nucleus;
  if (wants_k != k.has_value()) {
    throw UsageError(wants_k ? "top_k requires k" : "k is only valid for top_k");
  }
  if (wants_p != p.has_value()) {
    throw UsageError(wants_p ? "nucleus requires p" : "p is only valid for nucleus");
  }
  if (k && *k == 0) throw UsageError("k must be positive");
  if (p && !(*p > 0.0 && *p <= 1.0)) throw UsageError("p must lie in (0, 1]");
}

std::string DecodeConfig::tag() const {
  std::string out(to_string(strategy));
  if (k) out += std::to_string(*k);
  if (p) {
    std::ostringstream s;
    s << *p;
    out += s.str();
  }
  return out;
}

json DecodeConfig::to_json() const {
  json j;
  j["strategy"] = to_string(strategy);
  if (k) j["k"] = *k;
  if (p) j["p"] = *p;
  j["max_new_tokens"] = max_new_tokens;
  j["seed"] = seed;
  return j;
}

DecodeConfig DecodeConfig::from_json(const json& j) {
  DecodeConfig c;
  try {
    c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("k")) c.k = j.at("k").get<std::size_t>();
    if (j.contains("p")) c.p = j.at("p").get<double>();
    c.max_new_tokens = j.value("max_new_tokens", kDefaultMaxNewTokens);
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw UsageError(std::string("decode config: ") + e.what());
  }
  c.validate();
  return c;
}

StepDistribution restrict(const StepDistribution& dist, const DecodeConfig& config) {
  switch (config.strategy) {
    case Strategy::greedy:
    case Strategy::sample:
      return dist;
    case Strategy::top_k: {
      if (!config.k || *config.k == 0) throw UsageError("top_k requires k >= 1");
      const std::size_t keep = std::min(*config.k, dist.size());
      return keep_prefix(dist, descending_order(dist.probs()), keep);
    }
    case Strategy::nucleus: {
      if (!config.p || !(*config.p > 0.0 && *config.p <= 1.0)) {
        throw UsageError("nucleus requires p in (0, 1]");
      }
      const double p = *config.p;
      // The minimal covering set for p = 1 is every token with positive mass;
      // accumulated rounding must not cut it short.
      if (p == 1.0) return dist;
      const auto order = descending_order(dist.probs());
      double sum = 0.0;
      double carry = 0.0;
      std::size_t keep = 0;
      while (keep < order.size()) {
        const double v = dist[order[keep]];
        const double t = sum + v;
        carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
        sum = t;
        ++keep;
        if (sum + carry >= p) break;
      }
      return keep_prefix(dist, order, keep);
    }
  }
  return dist;
}

TokenId select(const StepDistribution& dist, const DecodeConfig& config, Rng& rng) {
  const auto probs = dist.probs();
  if (config.strategy == Strategy::greedy) {
    // max_element returns the first maximum, i.e. the lowest id.
    return static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  const StepDistribution restricted = restrict(dist, config);
  const auto q = restricted.probs();
  const double u = rng.uniform01();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    last_positive = i;
    cumulative += q[i];
    if (u < cumulative) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_positive);
}

Passage generate(const ProbabilitySource& model, std::span<const TokenId> condition,
                 const DecodeConfig& config, std::string id) {
  config.validate();
  if (condition.empty()) throw UsageError("generate: empty condition");
  Passage out;
  out.id = std::move(id);
  out.origin = Origin::generated;
  out.condition_len = condition.size();
  out.tokens.assign(condition.begin(), condition.end());
  out.tokens.reserve(condition.size() + config.max_new_tokens);

  Rng rng(config.seed);
  for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
    TokenId next;
    try {
      const StepDistribution dist = model.next_distribution(out.tokens);
      if (dist.size() != model.vocab_size()) {
        throw FormatError("distribution size " + std::to_string(dist.size()) +
                          " != vocab size " + std::to_string(model.vocab_size()));
      }
      next = select(dist, config, rng);
    } catch (const GenerationError&) {
      throw;
    } catch (const std::exception& e) {
      throw GenerationError(step, e.what());
    }
    out.tokens.push_back(next);
  }
  return out;
}

std::vector<Passage> generate_continuations(const ProbabilitySource& model,
                                            std::span<const Passage> sources,
                                            std::size_t condition_len, const DecodeConfig& config,
                                            std::size_t workers) {
  config.validate();
  std::vector<Passage> out(sources.size());
  parallel_for(sources.size(), workers, [&](std::size_t i) {
    const Passage& src = sources[i];
    const std::size_t len = std::min(condition_len, src.tokens.size());
    DecodeConfig c = config;
    c.seed = passage_seed(config.seed, i);
    Passage p = generate(model, std::span<const TokenId>(src.tokens).first(len), c,
                         src.id + "/" + config.tag());
    p.split = src.split;
    p.source_id = src.id;
    out[i] = std::move(p);
  });
  return out;
}

LogitsReplaySource::LogitsReplaySource(const Passage& passage, const StateTrace& logits)
    : passage_(&passage), logits_(&logits) {
  if (logits.num_layers() != 1 || logits.num_steps() != passage.tokens.size()) {
    throw FormatError("passage " + passage.id + ": logits must be 1 x T x vocab");
  }
}

StepDistribution LogitsReplaySource::next_distribution(std::span<const TokenId> prefix) const {
  if (prefix.empty() || prefix.size() > passage_->tokens.size()) {
    throw UsageError("replay of " + passage_->id + ": no logits for prefix length " +
                     std::to_string(prefix.size()));
  }
  if (!std::equal(prefix.begin(), prefix.end(), passage_->tokens.begin())) {
    throw UsageError("replay of " + passage_->id + ": prefix diverges from the exported tokens");
  }
  return StepDistribution::from_logits(logits_->at(0, prefix.size() - 1));
}

}  // namespace loopscope
