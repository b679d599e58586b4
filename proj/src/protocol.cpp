#include "loopscope/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "loopscope/error.hpp"
#include "loopscope/loopdetect.hpp"
#include "loopscope/rng.hpp"

namespace loopscope {

std::string_view to_string(CompareMode mode) {
  return mode == CompareMode::compare_seen ? "compare_seen" : "compare_unseen";
}

CompareMode parse_mode(std::string_view text) {
  if (text == "compare_seen" || text == "seen") return CompareMode::compare_seen;
  if (text == "compare_unseen" || text == "unseen") return CompareMode::compare_unseen;
  throw UsageError("unknown compare mode '" + std::string(text) + "'");
}

namespace {

struct Partition {
  std::vector<const CorpusEntry*> support;
  std::vector<const CorpusEntry*> evaluation;
};

std::vector<Partition> partition(std::span<const CorpusEntry> real, CompareMode mode,
                                 const ProtocolConfig& config) {
  std::vector<const CorpusEntry*> train;
  std::vector<const CorpusEntry*> held_out;
  for (const CorpusEntry& e : real) {
    switch (e.passage.split) {
      case Split::train: train.push_back(&e); break;
      case Split::valid:
      case Split::test: held_out.push_back(&e); break;
      case Split::synthetic: break;
    }
  }
  if (held_out.empty()) throw UsageError("compare protocol: no valid/test passages");

  if (mode == CompareMode::compare_seen) {
    if (train.empty()) throw UsageError("compare_seen: no train passages");
    return {Partition{train, held_out}};
  }

  if (config.folds < 2) throw UsageError("compare_unseen: need at least 2 folds");
  if (config.repetitions < 1 || config.repetitions > config.folds) {
    throw UsageError("compare_unseen: repetitions must lie in [1, folds]");
  }
  if (held_out.size() < config.folds) {
    throw UsageError("compare_unseen: fewer valid/test passages than folds");
  }
  Rng rng(stage_seed(config.seed, "protocol/unseen-partition"));
  for (std::size_t j = held_out.size(); j > 1; --j) {
    std::swap(held_out[j - 1], held_out[rng.uniform_below(j)]);
  }
  const std::size_t n = held_out.size();
  auto fold_begin = [&](std::size_t f) { return f * n / config.folds; };

  std::vector<Partition> out;
  for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
    Partition part;
    for (std::size_t f = 0; f < config.folds; ++f) {
      auto& dest = f == rep ? part.evaluation : part.support;
      dest.insert(dest.end(), held_out.begin() + fold_begin(f), held_out.begin() + fold_begin(f + 1));
    }
    out.push_back(std::move(part));
  }
  return out;
}

const StateTrace& states_of(const CorpusEntry& e) {
  if (!e.states) throw UsageError("passage " + e.passage.id + " has no hidden states");
  return *e.states;
}

std::vector<const StateTrace*> traces_of(std::span<const CorpusEntry* const> entries) {
  std::vector<const StateTrace*> out;
  out.reserve(entries.size());
  for (const CorpusEntry* e : entries) out.push_back(&states_of(*e));
  return out;
}

std::vector<std::string> ids_of(std::span<const CorpusEntry* const> entries) {
  std::vector<std::string> out;
  for (const CorpusEntry* e : entries) out.push_back(e->passage.id);
  return out;
}

}  // namespace

ProtocolResult compare_protocol(std::span<const CorpusEntry> real, CompareMode mode,
                                const ProtocolConfig& config, const ArtificialProvider& provider,
                                const Encoder& shuffle_encoder) {
  if (!(config.radius > 0.0)) throw UsageError("compare protocol: radius must be positive");
  const std::vector<Partition> parts = partition(real, mode, config);

  CurveOptions options;
  options.radius = config.radius;
  options.time_window = config.time_window;
  options.axis = config.axis;
  options.workers = config.workers;
  options.steps = config.steps;
  if (options.steps.empty() && config.axis == CurveAxis::absolute_time) {
    std::size_t max_steps = 0;
    for (const CorpusEntry& e : real) max_steps = std::max(max_steps, e.passage.tokens.size());
    options.steps = evenly_spaced_steps(max_steps, 20);
  }
  const bool relative = config.axis == CurveAxis::relative_to_loop_start;

  std::map<std::string, CurveAccumulator> curves;
  std::map<std::string, CurveAccumulator> differences;
  ProtocolResult result;

  for (std::size_t rep = 0; rep < parts.size(); ++rep) {
    const Partition& part = parts[rep];
    result.support_ids.push_back(ids_of(part.support));
    result.evaluation_ids.push_back(ids_of(part.evaluation));

    const auto support_traces = traces_of(part.support);
    const SupportIndex index = SupportIndex::build(support_traces, config.layer);
    const auto eval_traces = traces_of(part.evaluation);

    if (!relative) accumulate_counts(index, eval_traces, {}, options, curves["real"]);

    std::map<std::string, const StateTrace*> real_by_id;
    for (const CorpusEntry* e : part.evaluation) real_by_id[e->passage.id] = &states_of(*e);

    const auto artificial = provider ? provider(part.evaluation)
                                     : std::map<std::string, ArtificialSet>{};
    for (const auto& [strategy, set] : artificial) {
      if (strategy == "real" || strategy == "shuffled") {
        throw UsageError("strategy name '" + strategy + "' is reserved");
      }
      std::vector<const StateTrace*> traces;
      std::vector<const StateTrace*> paired;
      std::vector<std::optional<LoopSpec>> loops;
      for (const CorpusEntry& e : set) {
        traces.push_back(&states_of(e));
        if (relative) {
          loops.push_back(detect_continuation_loop(e.passage));
          if (!e.passage.source_id || !real_by_id.contains(*e.passage.source_id)) {
            throw UsageError("generated passage " + e.passage.id +
                             " does not name a conditioning passage from the evaluation set");
          }
          paired.push_back(real_by_id.at(*e.passage.source_id));
        }
      }
      accumulate_counts(index, traces, loops, options, curves[strategy]);
      if (relative) {
        accumulate_differences(index, traces, paired, loops, options, differences[strategy]);
      }
    }

    if (shuffle_encoder && !relative) {
      std::vector<Passage> originals;
      for (const CorpusEntry* e : part.evaluation) originals.push_back(e->passage);
      const auto shuffled = shuffle_control(
          originals, stage_seed(config.seed, "protocol/shuffle/" + std::to_string(rep)));
      std::vector<StateTrace> encoded;
      encoded.reserve(shuffled.size());
      for (const Passage& p : shuffled) encoded.push_back(shuffle_encoder(p));
      std::vector<const StateTrace*> ptrs;
      for (const StateTrace& t : encoded) ptrs.push_back(&t);
      accumulate_counts(index, ptrs, {}, options, curves["shuffled"]);
    }
  }

  for (const auto& [name, acc] : curves) result.curves[name] = acc.finish(config.axis);
  for (const auto& [name, acc] : differences) result.differences[name] = acc.finish(config.axis);
  return result;
}

ArtificialProvider corpus_provider(std::map<std::string, const Corpus*> by_strategy) {
  return [by_strategy = std::move(by_strategy)](std::span<const CorpusEntry* const> cond) {
    std::set<std::string> wanted;
    for (const CorpusEntry* e : cond) wanted.insert(e->passage.id);
    std::map<std::string, ArtificialSet> out;
    for (const auto& [strategy, corpus] : by_strategy) {
      ArtificialSet& set = out[strategy];
      for (const CorpusEntry& e : corpus->entries) {
        if (e.passage.source_id && wanted.contains(*e.passage.source_id)) set.push_back(e);
      }
    }
    return out;
  };
}

}  // namespace loopscope
