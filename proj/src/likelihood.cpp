#include "loopscope/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "loopscope/error.hpp"

using nlohmann::json;

namespace loopscope {

UniformScorer::UniformScorer(std::size_t vocab_size) {
  if (vocab_size == 0) throw UsageError("UniformScorer: empty vocabulary");
  loglik_ = -std::log(static_cast<double>(vocab_size));
}

std::vector<double> UniformScorer::score(const MaskedQuery& query) const {
  return std::vector<double>(query.positions.size(), loglik_);
}

ScoreFileScorer::ScoreFileScorer(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open score file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Record r;
      r.positions = j.at("positions").get<std::vector<std::size_t>>();
      r.loglik = j.at("loglik").get<std::vector<double>>();
      if (r.positions.size() != r.loglik.size()) {
        throw FormatError("positions and loglik differ in length");
      }
      for (double v : r.loglik) {
        if (!(v <= 0.0)) throw FormatError("log-likelihoods must be <= 0");
      }
      auto key = std::make_pair(j.at("passage_id").get<std::string>(),
                                j.at("repetition").get<std::size_t>());
      if (!records_.emplace(std::move(key), std::move(r)).second) {
        throw FormatError("duplicate (passage_id, repetition)");
      }
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<double> ScoreFileScorer::score(const MaskedQuery& query) const {
  auto it = records_.find({std::string(query.passage_id), query.repetition});
  if (it == records_.end()) {
    throw LoadError("no scores for passage " + std::string(query.passage_id) + " repetition " +
                    std::to_string(query.repetition));
  }
  const Record& r = it->second;
  if (!std::equal(r.positions.begin(), r.positions.end(), query.positions.begin(),
                  query.positions.end())) {
    throw FormatError("score file positions for " + std::string(query.passage_id) +
                      " differ from the masking stream; was it produced with the same seed?");
  }
  return r.loglik;
}

std::size_t mask_count(std::size_t length, double fraction) {
  const double exact = fraction * static_cast<double>(length);
  const double nearest = std::round(exact);
  if (std::abs(exact - nearest) < 1e-9) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(exact));
}

std::vector<std::size_t> select_mask_positions(std::size_t length, double fraction, Rng& rng) {
  const std::size_t k = std::min(mask_count(length, fraction), length);
  std::vector<std::size_t> slots(length);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(slots[i], slots[i + rng.uniform_below(length - i)]);
  }
  slots.resize(k);
  std::sort(slots.begin(), slots.end());
  return slots;
}

std::vector<LikelihoodPoint> masked_likelihood_curve(std::span<const Passage> passages,
                                                     const MaskedScorer& scorer,
                                                     double mask_fraction, std::size_t repetitions,
                                                     std::uint64_t seed) {
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
    throw UsageError("masked likelihood: mask fraction must lie in (0, 1)");
  }
  if (repetitions < 1) throw UsageError("masked likelihood: repetitions must be >= 1");

  std::vector<const Passage*> ordered;
  for (const Passage& p : passages) ordered.push_back(&p);
  std::sort(ordered.begin(), ordered.end(),
            [](const Passage* a, const Passage* b) { return a->id < b->id; });

  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (const Passage* p : ordered) {
    const std::size_t length = p->tokens.size();
    if (length == 0) continue;
    if (sums.size() < length) {
      sums.resize(length, 0.0);
      counts.resize(length, 0);
    }
    Rng rng(mask_seed(seed, p->id));
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto positions = select_mask_positions(length, mask_fraction, rng);
      const MaskedQuery query{p->id, rep, p->tokens, positions};
      std::vector<double> scores;
      for (int attempt = 0;; ++attempt) {
        try {
          scores = scorer.score(query);
          if (scores.size() != positions.size()) {
            throw FormatError("scorer returned " + std::to_string(scores.size()) + " values for " +
                              std::to_string(positions.size()) + " masked positions");
          }
          break;
        } catch (const std::exception& e) {
          if (attempt >= 1) {
            throw Error("masked likelihood: scoring passage " + p->id + " repetition " +
                        std::to_string(rep) + " failed twice: " + e.what());
          }
        }
      }
      for (std::size_t i = 0; i < positions.size(); ++i) {
        sums[positions[i]] += scores[i];
        ++counts[positions[i]];
      }
    }
  }

  std::vector<LikelihoodPoint> curve(sums.size());
  for (std::size_t t = 0; t < sums.size(); ++t) {
    curve[t].step = t;
    curve[t].n = counts[t];
    curve[t].mean = counts[t] ? sums[t] / static_cast<double>(counts[t]) : 0.0;
  }
  return curve;
}

}  // namespace loopscope
