#include "loopscope/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "loopscope/csv.hpp"
#include "loopscope/decode.hpp"
#include "loopscope/error.hpp"
#include "loopscope/likelihood.hpp"
#include "loopscope/loopdetect.hpp"
#include "loopscope/neighborhood.hpp"
#include "loopscope/parallel.hpp"
#include "loopscope/pca.hpp"
#include "loopscope/protocol.hpp"
#include "loopscope/rng.hpp"
#include "loopscope/textmetrics.hpp"
#include "loopscope/toylm.hpp"
#include "loopscope/trace.hpp"

namespace loopscope {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kSubcommands = {"detect",       "generate",   "neighborhood",
                                            "inducingness", "likelihood", "pca",
                                            "toy-corpus"};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

void require_file(const json& path, const std::string& what) {
  if (!path.is_string()) throw UsageError(what + " must be a path");
  if (!fs::is_regular_file(path.get<std::string>())) {
    throw UsageError(what + ": no such file '" + path.get<std::string>() + "'");
  }
}

json as_array(const json& j) { return j.is_array() ? j : json::array({j}); }

// Tokens of the form "greedy", "sample", "top_k=40", "nucleus=0.9".
json decode_from_flag(const std::string& text) {
  const auto eq = text.find('=');
  json j{{"strategy", text.substr(0, eq)}};
  const Strategy s = parse_strategy(text.substr(0, eq));
  if (eq == std::string::npos) return j;
  const std::string value = text.substr(eq + 1);
  try {
    if (s == Strategy::top_k) {
      j["k"] = std::stoul(value);
    } else if (s == Strategy::nucleus) {
      j["p"] = std::stod(value);
    } else {
      throw UsageError("strategy " + text.substr(0, eq) + " takes no parameter");
    }
  } catch (const std::logic_error&) {
    throw UsageError("bad decode parameter in '" + text + "'");
  }
  return j;
}

json resolve_decode(json d, std::uint64_t seed, bool default_length) {
  if (!d.is_object()) throw UsageError("decode entries must be objects");
  if (default_length && !d.contains("max_new_tokens")) {
    d["max_new_tokens"] = DecodeConfig::kDefaultMaxNewTokens;
  }
  DecodeConfig config = DecodeConfig::from_json(d);
  if (!d.contains("seed")) config.seed = stage_seed(seed, "decode/" + config.tag());
  json out = config.to_json();
  if (!d.contains("max_new_tokens")) out.erase("max_new_tokens");
  return out;
}

json resolve_decodes(const json& list, std::uint64_t seed, bool default_length) {
  json out = json::array();
  std::set<std::string> tags;
  for (const json& d : as_array(list)) {
    json r = resolve_decode(d, seed, default_length);
    const std::string tag = DecodeConfig::from_json(r).tag();
    if (!tags.insert(tag).second) throw UsageError("decode config '" + tag + "' listed twice");
    out.push_back(std::move(r));
  }
  return out;
}

json default_layers(const json& manifest) {
  const json layers = manifest.value("state_layers", json::array());
  if (layers.empty()) return json::array({0});
  for (const json& l : layers) {
    if (l == 7) return json::array({7});
  }
  return json::array({layers.front()});
}

void set_default(json& a, const char* key, json value) {
  if (!a.contains(key)) a[key] = std::move(value);
}

json resolve_impl(json c) {
  if (!c.is_object()) throw UsageError("run config must be a JSON object");
  const std::string sub = c.value("subcommand", "");
  if (!kSubcommands.contains(sub)) throw UsageError("unknown subcommand '" + sub + "'");
  if (!c.contains("output") || !c["output"].is_string()) {
    throw UsageError("no output directory (--out)");
  }
  c["seed"] = c.value("seed", std::uint64_t{0});
  c["workers"] = c.value("workers", default_workers());
  if (c["workers"].get<std::size_t>() == 0) throw UsageError("workers must be >= 1");
  if (!c.contains("analysis")) c["analysis"] = json::object();
  json& a = c["analysis"];
  const std::uint64_t seed = c["seed"];

  json manifest = json::object();
  if (sub != "toy-corpus") {
    if (!c.contains("corpus")) throw UsageError(sub + " needs a corpus manifest (--corpus)");
    require_file(c["corpus"], "corpus");
    manifest = read_json_file(c["corpus"].get<std::string>());
  }

  if (c.contains("model") && c["model"].is_string()) {
    require_file(c["model"], "model");
    c["model"] = read_json_file(c["model"].get<std::string>());
  }
  if (!c.contains("model")) {
    const json meta = manifest.value("metadata", json::object());
    if (meta.contains("model")) {
      c["model"] = meta["model"];
    } else {
      c["model"] = json{{"type", sub == "toy-corpus" ? "toy" : "trace"}};
    }
  }
  const std::string type = c["model"].value("type", "toy");
  if (type == "toy") {
    c["model"] = ToyLMSpec::from_json(c["model"]).to_json();
  } else if (type == "trace") {
    c["model"] = json{{"type", "trace"}};
  } else {
    throw UsageError("model type must be 'toy' or 'trace', got '" + type + "'");
  }
  const bool toy = type == "toy";

  if (sub == "generate") {
    set_default(a, "condition_len", 50);
    set_default(a, "limit", 0);
    c["decode"] = resolve_decodes(c.value("decode", json::array({{{"strategy", "greedy"}}})), seed,
                                  true);
  } else if (sub == "neighborhood") {
    a["layers"] = as_array(a.value("layers", default_layers(manifest)));
    a["radius"] = as_array(a.value("radius", json(toy ? 0.3 : 1024.0)));
    for (const json& r : a["radius"]) {
      if (!(r.get<double>() > 0.0)) throw UsageError("radius must be positive");
    }
    set_default(a, "time_window", 5);
    a["modes"] = as_array(a.value("modes", json("compare_seen")));
    for (json& m : a["modes"]) m = to_string(parse_mode(m.get<std::string>()));
    a["axes"] = as_array(a.value("axes", json::array({"absolute_time", "relative_to_loop_start"})));
    for (json& x : a["axes"]) x = to_string(parse_axis(x.get<std::string>()));
    set_default(a, "steps", json::array());
    set_default(a, "folds", 10);
    set_default(a, "repetitions", 3);
    set_default(a, "condition_len", 50);
    set_default(a, "shuffled", toy);
    if (a["shuffled"].get<bool>() && !toy) {
      throw UsageError("the shuffled control needs a toy model to encode passages");
    }
    if (c.contains("artificial")) {
      if (!c["artificial"].is_object()) throw UsageError("artificial must map names to manifests");
      for (const auto& [name, path] : c["artificial"].items()) require_file(path, "artificial." + name);
      c.erase("decode");
    } else if (toy) {
      c["decode"] = resolve_decodes(
          c.value("decode", json::array({{{"strategy", "greedy"}},
                                         {{"strategy", "sample"}},
                                         {{"strategy", "top_k"}, {"k", 40}},
                                         {{"strategy", "nucleus"}, {"p", 0.9}}})),
          seed, false);
    }
  } else if (sub == "inducingness") {
    if (!toy) throw UsageError("inducingness needs a toy model to generate from");
    c["decode"] = resolve_decodes(c.value("decode", json::array({{{"strategy", "greedy"}}})), seed,
                                  false);
    if (c["decode"].size() != 1) throw UsageError("inducingness takes exactly one decode config");
    set_default(a, "max_repeats", 3);
    set_default(a, "context_sentences", 5);
    set_default(a, "condition_len", 50);
    set_default(a, "limit", 0);
  } else if (sub == "likelihood") {
    set_default(a, "mask_fraction", 0.15);
    set_default(a, "repetitions", 10);
    if (c.contains("scores")) require_file(c["scores"], "scores");
  } else if (sub == "pca") {
    const json layers = as_array(a.value("layers", default_layers(manifest)));
    if (layers.size() != 1) throw UsageError("pca takes exactly one layer");
    a["layers"] = layers;
    set_default(a, "components", 2);
    set_default(a, "stride", 1);
    if (a["stride"].get<std::size_t>() == 0) throw UsageError("stride must be >= 1");
    c["with"] = as_array(c.value("with", json::array()));
    for (const json& p : c["with"]) require_file(p, "with");
  } else if (sub == "toy-corpus") {
    if (!toy) throw UsageError("toy-corpus needs a toy model spec");
    set_default(a, "train", 300);
    set_default(a, "valid", 50);
    set_default(a, "test", 50);
    set_default(a, "length", 256);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Running

class Run {
 public:
  Run(const json& config) : config_(config), dir_(config.at("output").get<std::string>()) {}

  const json& config() const { return config_; }
  const json& analysis() const { return config_.at("analysis"); }
  std::uint64_t seed() const { return config_.at("seed"); }
  std::size_t workers() const { return config_.at("workers"); }
  const fs::path& dir() const { return dir_; }

  void save(const std::string& relative, std::string_view text) {
    write_text_file(dir_ / relative, text);
    outputs_.push_back(relative);
  }
  void record(const std::string& relative) { outputs_.push_back(relative); }

  void status(std::string_view state, std::string_view error = {}) const {
    json s{{"status", state},
           {"subcommand", config_.at("subcommand")},
           {"seed", seed()},
           {"outputs", outputs_},
           {"partial", state != "ok"}};
    if (!error.empty()) s["error"] = error;
    write_text_file(dir_ / "status.json", s.dump(2) + "\n");
  }

 private:
  json config_;
  fs::path dir_;
  std::vector<std::string> outputs_;
};

std::unique_ptr<SelfReinforcingLM> toy_model(const json& config, const Corpus* corpus) {
  if (config.at("model").at("type") != "toy") return nullptr;
  auto lm = std::make_unique<SelfReinforcingLM>(ToyLMSpec::from_json(config.at("model")));
  if (corpus && corpus->vocab_size != lm->vocab_size()) {
    throw UsageError("toy model vocabulary (" + std::to_string(lm->vocab_size()) +
                     ") does not match the corpus (" + std::to_string(corpus->vocab_size) + ")");
  }
  return lm;
}

std::vector<Passage> real_passages(const Corpus& corpus, std::size_t limit) {
  std::vector<Passage> out;
  for (const CorpusEntry& e : corpus.entries) {
    if (e.passage.origin != Origin::real) continue;
    if (limit && out.size() == limit) break;
    out.push_back(e.passage);
  }
  if (out.empty()) throw UsageError("corpus has no real passages");
  return out;
}

TokenText text_function(const Corpus& corpus, const SelfReinforcingLM* lm) {
  if (!corpus.vocab.empty()) {
    return [&corpus](TokenId t) { return t < corpus.vocab.size() ? corpus.vocab[t] : std::string(); };
  }
  if (lm) return [lm](TokenId t) { return lm->word(t); };
  return [](TokenId) { return std::string(); };
}

Renderer renderer(const Corpus& corpus, const SelfReinforcingLM* lm) {
  if (corpus.vocab.empty() && lm) {
    return [lm](std::span<const TokenId> t) { return lm->render(t); };
  }
  return [&corpus](std::span<const TokenId> t) { return corpus.render(t); };
}

// Continuations of `sources` as long as the shortest source, unless the
// config fixes a length.
DecodeConfig decode_for(const json& d, std::span<const Passage> sources, std::size_t condition_len) {
  DecodeConfig config = DecodeConfig::from_json(d);
  if (!d.contains("max_new_tokens")) {
    std::size_t shortest = sources.empty() ? 0 : sources.front().tokens.size();
    for (const Passage& p : sources) shortest = std::min(shortest, p.tokens.size());
    if (shortest <= condition_len) {
      throw UsageError("passages must be longer than the condition length " +
                       std::to_string(condition_len));
    }
    config.max_new_tokens = shortest - condition_len;
  }
  return config;
}

std::string curve_csv(const DeviationCurve& curve, const std::string& strategy, CompareMode mode,
                      int layer, double radius, std::uint64_t seed) {
  CsvWriter csv({"step", "mean", "std", "n", "strategy", "mode", "axis", "layer", "radius", "seed"});
  for (const CurvePoint& p : curve.points) {
    csv.field(p.step).field(p.mean).field(p.std).field(static_cast<unsigned long long>(p.n));
    csv.field(strategy).field(to_string(mode)).field(to_string(curve.axis));
    csv.field(layer).field(radius).field(static_cast<unsigned long long>(seed));
    csv.end_row();
  }
  return csv.str();
}

std::string corpus_label(const Corpus& corpus, const fs::path& manifest, std::size_t index) {
  if (corpus.metadata.contains("strategy") && corpus.metadata["strategy"].is_string()) {
    return corpus.metadata["strategy"];
  }
  if (index == 0) return "corpus";
  const std::string dir = manifest.parent_path().filename().string();
  return dir.empty() ? "with" + std::to_string(index) : dir;
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_detect(Run& run) {
  const Corpus corpus = load_corpus(run.config().at("corpus").get<std::string>());
  if (corpus.entries.empty()) throw UsageError("corpus is empty");
  const auto lm = toy_model(run.config(), &corpus);
  const TokenText text_of = text_function(corpus, lm.get());
  const Renderer render = renderer(corpus, lm.get());

  std::string jsonl;
  std::map<std::string, std::vector<Passage>> by_origin;
  std::vector<Passage> all;
  std::size_t looping = 0;
  for (const CorpusEntry& e : corpus.entries) {
    all.push_back(e.passage);
    by_origin[std::string(to_string(e.passage.origin))].push_back(e.passage);
    const auto loop = detect_continuation_loop(e.passage);
    if (!loop) continue;
    ++looping;
    const auto rotated = rotate_to_sentence_start(*loop, text_of);
    json rec{{"passage_id", e.passage.id},
             {"origin", to_string(e.passage.origin)},
             {"rho", loop->rho},
             {"lambda", loop->period},
             {"looping_text", render(loop->looping_tokens)},
             {"rotated_text", render(rotated)},
             {"looping_tokens", loop->looping_tokens},
             {"seed", run.seed()}};
    jsonl += rec.dump() + "\n";
  }
  run.save("loops.jsonl", jsonl);

  json summary{{"passages", all.size()},
               {"looping", looping},
               {"loop_rate", loop_rate(all)},
               {"seed", run.seed()},
               {"by_origin", json::object()}};
  for (const auto& [origin, passages] : by_origin) {
    summary["by_origin"][origin] = {{"passages", passages.size()}, {"loop_rate", loop_rate(passages)}};
  }
  run.save("summary.json", summary.dump(2) + "\n");
}

void cmd_generate(Run& run) {
  const std::string corpus_path = run.config().at("corpus");
  const Corpus corpus = load_corpus(corpus_path);
  const auto lm = toy_model(run.config(), &corpus);
  const std::size_t condition_len = run.analysis().at("condition_len");
  const std::vector<Passage> sources = real_passages(corpus, run.analysis().at("limit"));

  for (const json& d : run.config().at("decode")) {
    const DecodeConfig config = DecodeConfig::from_json(d);
    Corpus out;
    out.vocab_size = corpus.vocab_size;
    out.vocab = corpus.vocab;
    out.metadata = {{"strategy", config.tag()},
                    {"decode", config.to_json()},
                    {"condition_len", condition_len},
                    {"seed", run.seed()},
                    {"model", run.config().at("model")},
                    {"source_corpus", corpus_path}};

    if (lm) {
      if (out.vocab.empty()) out.vocab = toy_vocab(*lm);
      for (Passage& p : generate_continuations(*lm, sources, condition_len, config, run.workers())) {
        p.split = Split::synthetic;
        CorpusEntry e{std::move(p), std::nullopt, std::nullopt};
        e.states = lm->hidden_states(e.passage.tokens, e.passage.id);
        out.entries.push_back(std::move(e));
      }
    } else {
      // Trace-backed: re-decode each exported passage from its stored logits.
      out.state_layers = corpus.state_layers;
      std::map<std::string, const CorpusEntry*> by_id;
      for (const CorpusEntry& e : corpus.entries) by_id[e.passage.id] = &e;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        const CorpusEntry& src = *by_id.at(sources[i].id);
        if (!src.logits) throw UsageError("passage " + src.passage.id + " has no stored logits");
        if (src.passage.tokens.size() <= condition_len) {
          throw UsageError("passage " + src.passage.id + " is not longer than the condition");
        }
        DecodeConfig c = config;
        c.seed = passage_seed(config.seed, i);
        c.max_new_tokens = src.passage.tokens.size() - condition_len;
        const LogitsReplaySource model(src.passage, *src.logits);
        const std::span<const TokenId> condition(src.passage.tokens.data(), condition_len);
        Passage p = generate(model, condition, c, src.passage.id + "/" + config.tag());
        p.source_id = src.passage.id;
        CorpusEntry e{std::move(p), src.states, src.logits};
        out.entries.push_back(std::move(e));
      }
    }
    write_corpus(out, run.dir() / config.tag());
    run.record(config.tag() + "/manifest.json");
  }
}

// Generates continuations on demand and caches them per conditioning set.
ArtificialProvider toy_provider(const SelfReinforcingLM& lm, const json& decodes,
                                std::size_t condition_len, std::size_t workers) {
  auto cache = std::make_shared<std::map<std::vector<std::string>, std::map<std::string, ArtificialSet>>>();
  return [&lm, decodes, condition_len, workers, cache](std::span<const CorpusEntry* const> cond) {
    std::vector<std::string> key;
    std::vector<Passage> sources;
    for (const CorpusEntry* e : cond) {
      key.push_back(e->passage.id);
      sources.push_back(e->passage);
    }
    if (auto it = cache->find(key); it != cache->end()) return it->second;
    std::map<std::string, ArtificialSet> out;
    for (const json& d : decodes) {
      const DecodeConfig config = decode_for(d, sources, condition_len);
      ArtificialSet& set = out[config.tag()];
      for (Passage& p : generate_continuations(lm, sources, condition_len, config, workers)) {
        StateTrace states = lm.hidden_states(p.tokens, p.id);
        set.push_back(CorpusEntry{std::move(p), std::move(states), std::nullopt});
      }
    }
    cache->emplace(std::move(key), out);
    return out;
  };
}

void cmd_neighborhood(Run& run) {
  const Corpus corpus = load_corpus(run.config().at("corpus").get<std::string>());
  const auto lm = toy_model(run.config(), &corpus);
  const json& a = run.analysis();

  std::map<std::string, Corpus> artificial;
  ArtificialProvider provider;
  if (run.config().contains("artificial")) {
    std::map<std::string, const Corpus*> ptrs;
    for (const auto& [name, path] : run.config()["artificial"].items()) {
      artificial.emplace(name, load_corpus(path.get<std::string>()));
      ptrs[name] = &artificial.at(name);
    }
    provider = corpus_provider(std::move(ptrs));
  } else if (lm && run.config().contains("decode")) {
    provider = toy_provider(*lm, run.config()["decode"], a.at("condition_len"), run.workers());
  }
  Encoder encoder;
  if (a.at("shuffled").get<bool>()) {
    encoder = [&lm](const Passage& p) { return lm->hidden_states(p.tokens, p.id); };
  }

  json index{{"seed", run.seed()},
             {"support_steps", "every support step within the time window, condition region included"},
             {"runs", json::array()},
             {"partitions", json::object()}};
  for (const json& m : a.at("modes")) {
    const CompareMode mode = parse_mode(m.get<std::string>());
    for (const json& x : a.at("axes")) {
      const CurveAxis axis = parse_axis(x.get<std::string>());
      const std::string axis_name = axis == CurveAxis::absolute_time ? "absolute" : "relative";
      for (const json& l : a.at("layers")) {
        const int layer = l.get<int>();
        for (const json& r : a.at("radius")) {
          const double radius = r.get<double>();
          ProtocolConfig pc;
          pc.layer = corpus.layer_index(layer);
          pc.radius = radius;
          pc.time_window = a.at("time_window");
          pc.axis = axis;
          pc.steps = a.at("steps").get<std::vector<long>>();
          pc.folds = a.at("folds");
          pc.repetitions = a.at("repetitions");
          pc.seed = stage_seed(run.seed(), "neighborhood");
          pc.workers = run.workers();
          const ProtocolResult result = compare_protocol(corpus.entries, mode, pc, provider, encoder);

          const std::string stem = "curves/" + std::string(to_string(mode)) + "-" + axis_name +
                                   "-layer" + std::to_string(layer) + "-r" + format_double(radius);
          json files = json::array();
          for (const auto& [name, curve] : result.curves) {
            const std::string file = stem + "-" + name + ".csv";
            run.save(file, curve_csv(curve, name, mode, layer, radius, run.seed()));
            files.push_back(file);
          }
          for (const auto& [name, curve] : result.differences) {
            const std::string file = stem + "-" + name + "-minus-real.csv";
            run.save(file, curve_csv(curve, name + "-minus-real", mode, layer, radius, run.seed()));
            files.push_back(file);
          }
          index["runs"].push_back({{"mode", to_string(mode)},
                                   {"axis", to_string(axis)},
                                   {"layer", layer},
                                   {"radius", radius},
                                   {"files", files}});
          index["partitions"][std::string(to_string(mode))] = {
              {"support_ids", result.support_ids}, {"evaluation_ids", result.evaluation_ids}};
        }
      }
    }
  }
  run.save("neighborhood.json", index.dump(2) + "\n");
}

void cmd_inducingness(Run& run) {
  const Corpus corpus = load_corpus(run.config().at("corpus").get<std::string>());
  const auto lm = toy_model(run.config(), &corpus);
  const json& a = run.analysis();
  const std::size_t condition_len = a.at("condition_len");
  const std::vector<Passage> real = real_passages(corpus, a.at("limit"));
  const json& d = run.config().at("decode").at(0);
  const DecodeConfig config = DecodeConfig::from_json(d);

  const TokenText text_of = text_function(corpus, lm.get());
  const SentenceTerminals terminals;
  const TerminalTest is_terminal = [&](TokenId t) {
    return corpus.vocab.empty() ? lm->is_terminal(t) : terminals.is_terminal(text_of(t));
  };
  const Renderer render = renderer(corpus, lm.get());

  ConditionSets sets;
  const DecodeConfig loop_config = decode_for(d, real, condition_len);
  for (const Passage& p : generate_continuations(*lm, real, condition_len, loop_config, run.workers())) {
    if (const auto loop = detect_continuation_loop(p)) {
      sets[ConditionClass::looping_sequence].push_back(rotate_to_sentence_start(*loop, text_of));
    }
  }
  std::vector<std::size_t> long_enough;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const auto sentences = split_sentences(real[i].tokens, is_terminal);
    if (sentences.empty()) continue;
    sets[ConditionClass::first_sentence].push_back(sentences.front());
    sets[ConditionClass::last_sentence].push_back(sentences.back());
    if (sentences.size() >= a.at("context_sentences").get<std::size_t>()) long_enough.push_back(i);
  }
  for (auto it = sets.begin(); it != sets.end();) {
    if (it->second.empty()) {
      std::cerr << "inducingness: no conditions of class " << to_string(it->first) << '\n';
      it = sets.erase(it);
    } else {
      ++it;
    }
  }
  if (sets.empty()) throw UsageError("inducingness: no conditions found");
  if (long_enough.empty()) throw UsageError("inducingness: no passage has enough sentences for the context");

  Rng rng(stage_seed(run.seed(), "inducingness/context"));
  const Passage& ctx_source = real[long_enough[rng.uniform_below(long_enough.size())]];
  std::vector<TokenId> context;
  const auto ctx_sentences = split_sentences(ctx_source.tokens, is_terminal);
  for (std::size_t s = 0; s < a.at("context_sentences").get<std::size_t>(); ++s) {
    context.insert(context.end(), ctx_sentences[s].begin(), ctx_sentences[s].end());
  }

  std::string conditions;
  for (const auto& [cls, xs] : sets) {
    for (std::size_t j = 0; j < xs.size(); ++j) {
      json rec{{"class", to_string(cls)}, {"index", j}, {"tokens", xs[j]}, {"text", render(xs[j])}};
      conditions += rec.dump() + "\n";
    }
  }
  run.save("inducingness_conditions.jsonl", conditions);
  run.save("context.json", json{{"passage_id", ctx_source.id},
                                {"tokens", context},
                                {"text", render(context)},
                                {"similarity", "mean and std are ROUGE-L F1; precision and recall "
                                               "columns hold the mean ROUGE-L precision and recall"},
                                {"seed", run.seed()}}
                                   .dump(2) +
                               "\n");

  auto table = [&](const std::vector<InducingnessReport>& reports) {
    CsvWriter csv({"class", "repeats", "mean", "std", "n", "skipped", "precision", "recall", "seed"});
    for (const InducingnessReport& r : reports) {
      csv.field(to_string(r.condition_class)).field(r.repeats).field(r.mean).field(r.std);
      csv.field(static_cast<unsigned long long>(r.n)).field(static_cast<unsigned long long>(r.skipped));
      csv.field(r.mean_precision).field(r.mean_recall);
      csv.field(static_cast<unsigned long long>(run.seed()));
      csv.end_row();
    }
    return csv.str();
  };
  run.save("inducingness_simple.csv",
           table(inducingness_simple(sets, *lm, config, render, run.workers())));
  run.save("inducingness_repeated.csv",
           table(inducingness_repeated(context, sets, a.at("max_repeats"), *lm, config, render,
                                       run.workers())));
}

void cmd_likelihood(Run& run) {
  const Corpus corpus = load_corpus(run.config().at("corpus").get<std::string>());
  std::unique_ptr<MaskedScorer> scorer;
  if (run.config().contains("scores")) {
    scorer = std::make_unique<ScoreFileScorer>(run.config()["scores"].get<std::string>());
  } else {
    scorer = std::make_unique<UniformScorer>(corpus.vocab_size);
  }
  std::map<std::string, std::vector<Passage>> by_origin;
  for (const CorpusEntry& e : corpus.entries) {
    by_origin[std::string(to_string(e.passage.origin))].push_back(e.passage);
  }
  if (by_origin.empty()) throw UsageError("corpus is empty");

  CsvWriter csv({"origin", "step", "mean", "n", "seed"});
  for (const auto& [origin, passages] : by_origin) {
    const auto curve = masked_likelihood_curve(passages, *scorer, run.analysis().at("mask_fraction"),
                                               run.analysis().at("repetitions"), run.seed());
    for (const LikelihoodPoint& p : curve) {
      csv.field(origin).field(static_cast<unsigned long long>(p.step)).field(p.mean);
      csv.field(static_cast<unsigned long long>(p.n)).field(static_cast<unsigned long long>(run.seed()));
      csv.end_row();
    }
  }
  run.save("likelihood.csv", csv.str());
}

void cmd_pca(Run& run) {
  std::vector<fs::path> paths{run.config().at("corpus").get<std::string>()};
  for (const json& p : run.config().at("with")) paths.emplace_back(p.get<std::string>());
  const int layer = run.analysis().at("layers").at(0);
  const std::size_t stride = run.analysis().at("stride");

  struct Row {
    std::string source;
    std::string passage_id;
    Origin origin;
    std::size_t step;
  };
  std::vector<Row> rows;
  std::vector<float> points;
  std::size_t dim = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Corpus corpus = load_corpus(paths[i]);
    const std::string label = corpus_label(corpus, paths[i], i);
    const std::size_t li = corpus.layer_index(layer);
    for (const CorpusEntry& e : corpus.entries) {
      if (!e.states) throw UsageError("passage " + e.passage.id + " has no hidden states");
      if (li >= e.states->num_layers()) {
        throw UsageError("passage " + e.passage.id + " has no layer " + std::to_string(layer));
      }
      if (dim == 0) dim = e.states->dim();
      if (e.states->dim() != dim) throw FormatError("pca: state dimensions differ across corpora");
      for (std::size_t t = 0; t < e.states->num_steps(); t += stride) {
        const auto v = e.states->at(li, t);
        points.insert(points.end(), v.begin(), v.end());
        rows.push_back({label, e.passage.id, e.passage.origin, t});
      }
    }
  }
  if (dim == 0) throw UsageError("pca: no states");
  const std::size_t k = run.analysis().at("components");
  const PcaResult pca = pca_project(points, dim, k);

  std::vector<std::string> header{"source", "passage_id", "origin", "step"};
  for (std::size_t c = 0; c < k; ++c) header.push_back("pc" + std::to_string(c + 1));
  header.push_back("seed");
  CsvWriter projection(header);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    projection.field(rows[i].source).field(rows[i].passage_id).field(to_string(rows[i].origin));
    projection.field(static_cast<unsigned long long>(rows[i].step));
    for (std::size_t c = 0; c < k; ++c) projection.field(pca.projected[i * k + c]);
    projection.field(static_cast<unsigned long long>(run.seed()));
    projection.end_row();
  }
  run.save("pca_projection.csv", projection.str());

  CsvWriter variance({"component", "explained_variance", "explained_ratio", "seed"});
  for (std::size_t c = 0; c < k; ++c) {
    variance.field(static_cast<unsigned long long>(c + 1)).field(pca.explained_variance[c]);
    variance.field(pca.explained_ratio[c]).field(static_cast<unsigned long long>(run.seed()));
    variance.end_row();
  }
  run.save("pca_variance.csv", variance.str());
}

void cmd_toy_corpus(Run& run) {
  const auto lm = toy_model(run.config(), nullptr);
  const json& a = run.analysis();
  const Corpus corpus = make_toy_corpus(*lm, a.at("train"), a.at("valid"), a.at("test"),
                                        a.at("length"), run.seed());
  write_corpus(corpus, run.dir());
  run.record("manifest.json");
}

void dispatch(Run& run) {
  const std::string sub = run.config().at("subcommand");
  try {
    if (sub == "detect") return cmd_detect(run);
    if (sub == "generate") return cmd_generate(run);
    if (sub == "neighborhood") return cmd_neighborhood(run);
    if (sub == "inducingness") return cmd_inducingness(run);
    if (sub == "likelihood") return cmd_likelihood(run);
    if (sub == "pca") return cmd_pca(run);
    if (sub == "toy-corpus") return cmd_toy_corpus(run);
  } catch (const json::exception& e) {
    throw UsageError(std::string("run config: ") + e.what());
  }
  throw UsageError("unknown subcommand '" + sub + "'");
}

}  // namespace

json resolve_run_config(json config) {
  try {
    return resolve_impl(std::move(config));
  } catch (const json::exception& e) {
    throw UsageError(std::string("run config: ") + e.what());
  }
}

void execute_run(const json& resolved) {
  Run run(resolved);
  fs::create_directories(run.dir());
  write_text_file(run.dir() / "run_config.json", resolved.dump(2) + "\n");
  run.status("running");
  try {
    dispatch(run);
  } catch (const std::exception& e) {
    run.status("error", e.what());
    throw;
  }
  run.status("ok");
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Repetition and hidden-state drift diagnostics for generated text", "loopscope"};
  app.require_subcommand(1);

  std::string config_path;
  json top = json::object();
  json analysis = json::object();
  json decodes = json::array();
  json artificial = json::object();

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON run config; flags override its fields")
        ->check(CLI::ExistingFile);
    sub->add_option_function<std::string>("-o,--out", [&](const std::string& v) { top["output"] = v; },
                                          "Output directory");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { top["seed"] = v; },
                                            "Top-level seed");
    sub->add_option_function<std::size_t>(
        "-j,--workers", [&](const std::size_t& v) { top["workers"] = v; },
        "Worker threads (default: $LOOPSCOPE_WORKERS or hardware concurrency)");
    sub->add_option_function<std::string>("--model", [&](const std::string& v) { top["model"] = v; },
                                          "Toy LM spec JSON (default: the corpus' own model)");
  };
  auto corpus = [&](CLI::App* sub) {
    sub->add_option_function<std::string>("--corpus", [&](const std::string& v) { top["corpus"] = v; },
                                          "Corpus manifest.json");
  };
  auto number = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                    const std::string& help) {
    sub->add_option_function<double>(flag, [&, key](const double& v) {
      if (v == static_cast<double>(static_cast<long long>(v))) {
        analysis[key] = static_cast<long long>(v);
      } else {
        analysis[key] = v;
      }
    }, help);
  };
  auto decode = [&](CLI::App* sub) {
    sub->add_option_function<std::vector<std::string>>(
        "--decode", [&](const std::vector<std::string>& v) {
          for (const std::string& s : v) decodes.push_back(decode_from_flag(s));
        },
        "greedy | sample | top_k=K | nucleus=P (repeatable)");
  };
  auto layers = [&](CLI::App* sub) {
    sub->add_option_function<std::vector<int>>(
        "--layer", [&](const std::vector<int>& v) { analysis["layers"] = v; }, "Model layer number(s)");
  };

  auto* detect = app.add_subcommand("detect", "Find repetitive loops in a corpus");
  common(detect);
  corpus(detect);

  auto* generate = app.add_subcommand("generate", "Generate continuations, one corpus per decode config");
  common(generate);
  corpus(generate);
  decode(generate);
  number(generate, "--condition-len", "condition_len", "Condition length in tokens (default 50)");
  number(generate, "--limit", "limit", "Use only the first N real passages (0 = all)");

  auto* neighborhood = app.add_subcommand("neighborhood", "Neighbor-count deviation curves");
  common(neighborhood);
  corpus(neighborhood);
  decode(neighborhood);
  layers(neighborhood);
  neighborhood->add_option_function<std::vector<double>>(
      "-r,--radius", [&](const std::vector<double>& v) { analysis["radius"] = v; }, "Radius (repeatable)");
  number(neighborhood, "--time-window", "time_window", "Time window delta (default 5)");
  neighborhood->add_option_function<std::vector<std::string>>(
      "--mode", [&](const std::vector<std::string>& v) { analysis["modes"] = v; },
      "compare_seen | compare_unseen (repeatable)");
  neighborhood->add_option_function<std::vector<std::string>>(
      "--axis", [&](const std::vector<std::string>& v) { analysis["axes"] = v; },
      "absolute | relative (repeatable)");
  neighborhood->add_option_function<std::vector<long>>(
      "--steps", [&](const std::vector<long>& v) { analysis["steps"] = v; }, "Explicit curve steps");
  number(neighborhood, "--folds", "folds", "compare_unseen folds (default 10)");
  number(neighborhood, "--repetitions", "repetitions", "compare_unseen repetitions (default 3)");
  number(neighborhood, "--condition-len", "condition_len", "Condition length (default 50)");
  neighborhood->add_option_function<std::vector<std::string>>(
      "--artificial", [&](const std::vector<std::string>& v) {
        for (const std::string& s : v) {
          const auto eq = s.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--artificial", "expected NAME=MANIFEST");
          artificial[s.substr(0, eq)] = s.substr(eq + 1);
        }
      },
      "Pre-generated corpus NAME=MANIFEST (repeatable)");
  neighborhood->add_flag_function("--no-shuffled", [&](std::int64_t) { analysis["shuffled"] = false; },
                                  "Skip the shuffled control");

  auto* inducing = app.add_subcommand("inducingness", "Loop-inducingness tables");
  common(inducing);
  corpus(inducing);
  decode(inducing);
  number(inducing, "--max-repeats", "max_repeats", "Largest repeat count (default 3)");
  number(inducing, "--context-sentences", "context_sentences", "Sentences in the context (default 5)");
  number(inducing, "--condition-len", "condition_len", "Condition length for loop mining (default 50)");
  number(inducing, "--limit", "limit", "Use only the first N real passages (0 = all)");

  auto* likelihood = app.add_subcommand("likelihood", "Masked-likelihood curve per time step");
  common(likelihood);
  corpus(likelihood);
  likelihood->add_option_function<std::string>(
      "--scores", [&](const std::string& v) { top["scores"] = v; },
      "Score file (JSONL); default is the uniform scorer");
  number(likelihood, "--mask-fraction", "mask_fraction", "Masked fraction (default 0.15)");
  number(likelihood, "--repetitions", "repetitions", "Masking repetitions (default 10)");

  auto* pca = app.add_subcommand("pca", "Project hidden states onto principal components");
  common(pca);
  corpus(pca);
  layers(pca);
  number(pca, "--components", "components", "Number of components (default 2)");
  number(pca, "--stride", "stride", "Use every Nth step (default 1)");
  pca->add_option_function<std::vector<std::string>>(
      "--with", [&](const std::vector<std::string>& v) { top["with"] = v; },
      "Extra corpora projected in the same basis");

  auto* toy = app.add_subcommand("toy-corpus", "Sample a real corpus from the toy LM");
  common(toy);
  number(toy, "--train", "train", "Train passages (default 300)");
  number(toy, "--valid", "valid", "Valid passages (default 50)");
  number(toy, "--test", "test", "Test passages (default 50)");
  number(toy, "--length", "length", "Tokens per passage (default 256)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  json resolved;
  try {
    const std::string sub = app.get_subcommands().front()->get_name();
    json config = config_path.empty() ? json::object() : read_json_file(config_path);
    if (!config.is_object()) throw UsageError("run config must be a JSON object");
    if (config.contains("subcommand") && config["subcommand"] != sub) {
      throw UsageError("config is for '" + config["subcommand"].get<std::string>() + "', not '" + sub + "'");
    }
    config["subcommand"] = sub;
    for (const auto& [key, value] : top.items()) config[key] = value;
    if (!config.contains("analysis")) config["analysis"] = json::object();
    for (const auto& [key, value] : analysis.items()) config["analysis"][key] = value;
    if (!decodes.empty()) config["decode"] = decodes;
    if (!artificial.empty()) config["artificial"] = artificial;
    resolved = resolve_run_config(std::move(config));
  } catch (const std::exception& e) {
    std::cerr << "loopscope: " << e.what() << '\n';
    return 2;
  }

  try {
    execute_run(resolved);
  } catch (const std::exception& e) {
    std::cerr << "loopscope: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace loopscope
