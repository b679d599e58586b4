#include <doctest.h>

#include <set>

#include "loopscope/error.hpp"
#include "loopscope/protocol.hpp"
#include "loopscope/toylm.hpp"

using namespace loopscope;

namespace {

ToyLMSpec small() {
  ToyLMSpec s;
  s.vocab_size = 64;
  s.state_dim = 8;
  s.window = 16;
  return s;
}

std::set<std::string> ids_with(const Corpus& c, std::initializer_list<Split> splits) {
  std::set<std::string> out;
  for (const auto& e : c.entries) {
    for (Split s : splits) {
      if (e.passage.split == s) out.insert(e.passage.id);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("protocol") {

TEST_CASE("compare_seen uses train as support") {
  const SelfReinforcingLM lm(small());
  const Corpus c = make_toy_corpus(lm, 12, 5, 4, 40, 1);
  ProtocolConfig pc;
  pc.radius = 0.5;
  const auto r = compare_protocol(c.entries, CompareMode::compare_seen, pc, {});
  REQUIRE(r.support_ids.size() == 1);
  CHECK(std::set<std::string>(r.support_ids[0].begin(), r.support_ids[0].end()) ==
        ids_with(c, {Split::train}));
  CHECK(std::set<std::string>(r.evaluation_ids[0].begin(), r.evaluation_ids[0].end()) ==
        ids_with(c, {Split::valid, Split::test}));
  CHECK(r.curves.count("real") == 1);
  CHECK(r.curves.count("shuffled") == 0);
}

TEST_CASE("compare_unseen folds partition the held-out passages") {
  const SelfReinforcingLM lm(small());
  const Corpus c = make_toy_corpus(lm, 3, 13, 10, 30, 2);
  ProtocolConfig pc;
  pc.radius = 0.5;
  pc.seed = 6;
  const auto r = compare_protocol(c.entries, CompareMode::compare_unseen, pc, {});
  REQUIRE(r.evaluation_ids.size() == 3);
  const auto held = ids_with(c, {Split::valid, Split::test});
  std::set<std::string> seen_eval;
  for (std::size_t rep = 0; rep < 3; ++rep) {
    std::set<std::string> ev(r.evaluation_ids[rep].begin(), r.evaluation_ids[rep].end());
    std::set<std::string> sup(r.support_ids[rep].begin(), r.support_ids[rep].end());
    CHECK(ev.size() >= 2);
    CHECK(ev.size() <= 3);
    std::set<std::string> all = ev;
    all.insert(sup.begin(), sup.end());
    CHECK(all == held);
    CHECK(all.size() == ev.size() + sup.size());
    for (const auto& id : ev) CHECK(seen_eval.insert(id).second);
  }
  CHECK(compare_protocol(c.entries, CompareMode::compare_unseen, pc, {}).evaluation_ids ==
        r.evaluation_ids);
  pc.seed = 7;
  CHECK(compare_protocol(c.entries, CompareMode::compare_unseen, pc, {}).evaluation_ids !=
        r.evaluation_ids);

  // Pooled: every evaluation passage contributes once per step.
  const auto& pts = r.curves.at("real").points;
  for (const auto& p : pts) CHECK(p.n == seen_eval.size());
}

TEST_CASE("protocol errors") {
  const SelfReinforcingLM lm(small());
  Corpus c = make_toy_corpus(lm, 4, 3, 0, 20, 3);
  ProtocolConfig pc;
  pc.radius = 1.0;
  CHECK_THROWS_AS(compare_protocol(c.entries, CompareMode::compare_unseen, pc, {}), UsageError);
  pc.radius = 0.0;
  CHECK_THROWS_AS(compare_protocol(c.entries, CompareMode::compare_seen, pc, {}), UsageError);
  pc.radius = 1.0;
  c.entries[5].states.reset();
  CHECK_THROWS_AS(compare_protocol(c.entries, CompareMode::compare_seen, pc, {}), UsageError);
  Corpus only_train = make_toy_corpus(lm, 4, 0, 0, 20, 3);
  CHECK_THROWS_AS(compare_protocol(only_train.entries, CompareMode::compare_seen, pc, {}), UsageError);
  CHECK(parse_mode("unseen") == CompareMode::compare_unseen);
  CHECK_THROWS_AS(parse_mode("other"), UsageError);
}

TEST_CASE("artificial sets, differences and the shuffled control") {
  const SelfReinforcingLM lm(small());
  const Corpus c = make_toy_corpus(lm, 30, 6, 6, 60, 4);
  DecodeConfig greedy;
  greedy.max_new_tokens = 40;
  ArtificialProvider provider = [&](std::span<const CorpusEntry* const> cond) {
    std::vector<Passage> sources;
    for (const auto* e : cond) sources.push_back(e->passage);
    ArtificialSet set;
    for (Passage& p : generate_continuations(lm, sources, 20, greedy, 2)) {
      StateTrace s = lm.hidden_states(p.tokens, p.id);
      set.push_back({std::move(p), std::move(s), std::nullopt});
    }
    return std::map<std::string, ArtificialSet>{{"greedy", set}};
  };
  Encoder encode = [&](const Passage& p) { return lm.hidden_states(p.tokens, p.id); };

  ProtocolConfig pc;
  pc.radius = 0.3;
  const auto abs = compare_protocol(c.entries, CompareMode::compare_seen, pc, provider, encode);
  CHECK(abs.curves.count("greedy") == 1);
  CHECK(abs.curves.count("shuffled") == 1);
  CHECK(abs.differences.empty());

  pc.axis = CurveAxis::relative_to_loop_start;
  const auto rel = compare_protocol(c.entries, CompareMode::compare_seen, pc, provider, encode);
  CHECK(rel.curves.count("real") == 0);
  CHECK(rel.curves.count("shuffled") == 0);
  CHECK(rel.differences.count("greedy") == 1);

  ArtificialProvider reserved = [&](std::span<const CorpusEntry* const>) {
    return std::map<std::string, ArtificialSet>{{"real", {}}};
  };
  CHECK_THROWS_AS(compare_protocol(c.entries, CompareMode::compare_seen, pc, reserved), UsageError);
}

TEST_CASE("corpus provider selects by source id") {
  Corpus gen;
  gen.vocab_size = 4;
  for (const char* src : {"a", "b", "c"}) {
    Passage p;
    p.id = std::string(src) + "/greedy";
    p.source_id = src;
    p.origin = Origin::generated;
    p.tokens = {1, 2};
    p.condition_len = 1;
    gen.entries.push_back({p, std::nullopt, std::nullopt});
  }
  CorpusEntry a{Passage{}, std::nullopt, std::nullopt};
  a.passage.id = "a";
  CorpusEntry c = a;
  c.passage.id = "c";
  const std::vector<const CorpusEntry*> cond{&a, &c};
  const auto out = corpus_provider({{"greedy", &gen}})(cond);
  REQUIRE(out.at("greedy").size() == 2);
  CHECK(out.at("greedy")[0].passage.id == "a/greedy");
  CHECK(out.at("greedy")[1].passage.id == "c/greedy");
}

}
