#include "loopscope/trace.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "loopscope/csv.hpp"
#include "loopscope/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace loopscope {

std::string_view to_string(Origin origin) {
  return origin == Origin::real ? "real" : "generated";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    case Split::synthetic: return "synthetic";
  }
  return "synthetic";
}

Origin parse_origin(std::string_view text) {
  if (text == "real") return Origin::real;
  if (text == "generated") return Origin::generated;
  throw FormatError("unknown origin '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "valid") return Split::valid;
  if (text == "test") return Split::test;
  if (text == "synthetic") return Split::synthetic;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

void Passage::validate() const {
  if (condition_len > tokens.size()) {
    throw UsageError("passage " + id + ": condition_len " + std::to_string(condition_len) +
                     " exceeds length " + std::to_string(tokens.size()));
  }
  if (origin == Origin::real && condition_len != 0) {
    throw UsageError("passage " + id + ": real passages have no condition");
  }
}

StateTrace::StateTrace(std::string passage_id, std::size_t num_layers, std::size_t num_steps,
                       std::size_t dim, std::vector<float> values)
    : passage_id_(std::move(passage_id)),
      num_layers_(num_layers),
      num_steps_(num_steps),
      dim_(dim),
      values_(std::move(values)) {
  if (num_layers_ == 0 || num_steps_ == 0 || dim_ == 0) {
    throw FormatError("trace " + passage_id_ + ": L, T and D must all be >= 1");
  }
  if (values_.size() != num_layers_ * num_steps_ * dim_) {
    throw FormatError("trace " + passage_id_ + ": " + std::to_string(values_.size()) +
                      " values for shape " + std::to_string(num_layers_) + "x" +
                      std::to_string(num_steps_) + "x" + std::to_string(dim_));
  }
}

std::span<const float> StateTrace::at(std::size_t layer, std::size_t step) const {
  if (layer >= num_layers_ || step >= num_steps_) {
    throw UsageError("trace " + passage_id_ + ": index (" + std::to_string(layer) + ", " +
                     std::to_string(step) + ") out of range");
  }
  return std::span<const float>(values_).subspan((layer * num_steps_ + step) * dim_, dim_);
}

std::size_t Corpus::layer_index(int model_layer) const {
  if (state_layers.empty()) {
    if (model_layer < 0) throw UsageError("negative layer " + std::to_string(model_layer));
    return static_cast<std::size_t>(model_layer);
  }
  auto it = std::find(state_layers.begin(), state_layers.end(), model_layer);
  if (it == state_layers.end()) {
    throw UsageError("layer " + std::to_string(model_layer) + " was not exported");
  }
  return static_cast<std::size_t>(it - state_layers.begin());
}

std::string Corpus::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (!vocab.empty() && t < vocab.size()) {
      out += vocab[t];
    } else {
      if (!out.empty()) out += ' ';
      out += std::to_string(t);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// .hst

namespace {

void put_u16(std::array<unsigned char, kHstHeaderBytes>& buf, std::size_t at, std::uint16_t v) {
  buf[at] = static_cast<unsigned char>(v & 0xff);
  buf[at + 1] = static_cast<unsigned char>(v >> 8);
}

void put_u32(std::array<unsigned char, kHstHeaderBytes>& buf, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf[at + i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw FormatError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_hst(const fs::path& path, const StateTrace& trace) {
  std::array<unsigned char, kHstHeaderBytes> header{};
  header[0] = 'H';
  header[1] = 'S';
  put_u16(header, 2, kHstVersion);
  put_u32(header, 4, checked_u32(trace.num_layers(), "L"));
  put_u32(header, 8, checked_u32(trace.num_steps(), "T"));
  put_u32(header, 12, checked_u32(trace.dim(), "D"));

  const auto values = trace.values();
  std::vector<unsigned char> payload(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }

  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(header.data()), header.size());
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

StateTrace read_hst(const fs::path& path, std::string passage_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("passage " + passage_id + ": cannot open " + path.string());

  unsigned char header[kHstHeaderBytes];
  in.read(reinterpret_cast<char*>(header), kHstHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHstHeaderBytes)) {
    throw FormatError(path.string() + ": truncated header");
  }
  if (header[0] != 'H' || header[1] != 'S') throw FormatError(path.string() + ": bad magic");
  const std::uint16_t version = static_cast<std::uint16_t>(header[2] | (header[3] << 8));
  if (version != kHstVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::size_t layers = get_u32(header + 4);
  const std::size_t steps = get_u32(header + 8);
  const std::size_t dim = get_u32(header + 12);
  const std::size_t count = layers * steps * dim;

  std::vector<unsigned char> payload(count * 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
    throw FormatError(path.string() + ": payload shorter than header shape");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }

  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(get_u32(payload.data() + 4 * i));
  }
  return StateTrace(std::move(passage_id), layers, steps, dim, std::move(values));
}

// ---------------------------------------------------------------------------
// Corpus files

namespace {

json passage_to_json(const Passage& p) {
  json j;
  j["id"] = p.id;
  j["tokens"] = p.tokens;
  j["origin"] = to_string(p.origin);
  j["condition_len"] = p.condition_len;
  j["split"] = to_string(p.split);
  if (p.text) j["text"] = *p.text;
  if (p.source_id) j["source_id"] = *p.source_id;
  return j;
}

Passage passage_from_json(const json& j) {
  Passage p;
  p.id = j.at("id").get<std::string>();
  for (const auto& t : j.at("tokens")) {
    const auto value = t.get<std::int64_t>();
    if (value < 0) throw FormatError("passage " + p.id + ": negative token id");
    p.tokens.push_back(static_cast<TokenId>(value));
  }
  p.origin = parse_origin(j.value("origin", "real"));
  p.condition_len = j.value("condition_len", std::size_t{0});
  p.split = parse_split(j.value("split", "synthetic"));
  if (j.contains("text")) p.text = j.at("text").get<std::string>();
  if (j.contains("source_id")) p.source_id = j.at("source_id").get<std::string>();
  return p;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Parsed token files, keyed by path, each mapping passage id to passage.
using TokenFileCache = std::map<fs::path, std::map<std::string, Passage>>;

const std::map<std::string, Passage>& token_file(TokenFileCache& cache, const fs::path& path,
                                                 const std::string& wanted_id) {
  if (auto it = cache.find(path); it != cache.end()) return it->second;
  std::ifstream in(path);
  if (!in) throw LoadError("passage " + wanted_id + ": missing token file " + path.string());
  std::map<std::string, Passage> passages;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Passage p = passage_from_json(json::parse(line));
      const std::string id = p.id;
      if (!passages.emplace(id, std::move(p)).second) {
        throw FormatError("duplicate passage id " + id);
      }
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cache.emplace(path, std::move(passages)).first->second;
}

fs::path resolve(const fs::path& base, const std::string& rel) {
  fs::path p(rel);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

Corpus load_corpus(const fs::path& manifest_path) {
  const json manifest = read_json_file(manifest_path);
  const fs::path base = manifest_path.parent_path();

  Corpus corpus;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != Corpus::kFormatVersion) {
      throw FormatError(manifest_path.string() + ": unsupported format_version " +
                        std::to_string(version));
    }
    corpus.vocab_size = manifest.at("vocab_size").get<std::size_t>();
    if (manifest.contains("state_layers")) {
      corpus.state_layers = manifest.at("state_layers").get<std::vector<int>>();
    }
    if (manifest.contains("metadata")) corpus.metadata = manifest.at("metadata");
    if (manifest.contains("vocab")) {
      const fs::path vocab_path = resolve(base, manifest.at("vocab").get<std::string>());
      corpus.vocab = read_json_file(vocab_path).get<std::vector<std::string>>();
    }

    TokenFileCache cache;
    std::set<std::string> seen;
    for (const auto& e : manifest.at("entries")) {
      const std::string id = e.at("passage_id").get<std::string>();
      if (!seen.insert(id).second) {
        throw FormatError(manifest_path.string() + ": duplicate passage_id " + id);
      }

      const auto& passages = token_file(cache, resolve(base, e.at("tokens").get<std::string>()), id);
      auto found = passages.find(id);
      if (found == passages.end()) {
        throw LoadError("passage " + id + ": not present in its token file");
      }
      CorpusEntry entry{found->second, std::nullopt, std::nullopt};
      try {
        entry.passage.validate();
      } catch (const UsageError& err) {
        throw FormatError(err.what());
      }
      for (TokenId t : entry.passage.tokens) {
        if (t >= corpus.vocab_size) {
          throw FormatError("passage " + id + ": token id " + std::to_string(t) +
                            " outside vocab_size " + std::to_string(corpus.vocab_size));
        }
      }

      if (e.contains("states") && !e.at("states").is_null()) {
        const fs::path path = resolve(base, e.at("states").get<std::string>());
        if (!fs::exists(path)) throw LoadError("passage " + id + ": missing state file " + path.string());
        StateTrace trace = read_hst(path, id);
        if (trace.num_steps() != entry.passage.tokens.size()) {
          throw FormatError("passage " + id + ": state file has T=" +
                            std::to_string(trace.num_steps()) + " but passage has " +
                            std::to_string(entry.passage.tokens.size()) + " tokens");
        }
        if (e.contains("num_layers") && e.at("num_layers").get<std::size_t>() != trace.num_layers()) {
          throw FormatError("passage " + id + ": manifest num_layers disagrees with tensor header");
        }
        if (e.contains("dim") && e.at("dim").get<std::size_t>() != trace.dim()) {
          throw FormatError("passage " + id + ": manifest dim disagrees with tensor header");
        }
        if (!corpus.state_layers.empty() && corpus.state_layers.size() != trace.num_layers()) {
          throw FormatError("passage " + id + ": state_layers lists " +
                            std::to_string(corpus.state_layers.size()) + " layers, file has " +
                            std::to_string(trace.num_layers()));
        }
        entry.states = std::move(trace);
      }

      if (e.contains("logits") && !e.at("logits").is_null()) {
        const fs::path path = resolve(base, e.at("logits").get<std::string>());
        if (!fs::exists(path)) throw LoadError("passage " + id + ": missing logits file " + path.string());
        StateTrace logits = read_hst(path, id);
        if (logits.num_layers() != 1 || logits.dim() != corpus.vocab_size ||
            logits.num_steps() != entry.passage.tokens.size()) {
          throw FormatError("passage " + id + ": logits file must be 1 x T x vocab_size");
        }
        entry.logits = std::move(logits);
      }
      corpus.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return corpus;
}

fs::path write_corpus(const Corpus& corpus, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw IoError("cannot create directory " + out_dir.string());
  }

  std::ostringstream tokens;
  json entries = json::array();
  std::set<std::string> seen;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
    const CorpusEntry& entry = corpus.entries[i];
    const Passage& p = entry.passage;
    p.validate();
    if (!seen.insert(p.id).second) throw UsageError("duplicate passage id " + p.id);
    tokens << passage_to_json(p).dump() << '\n';

    char stem[32];
    std::snprintf(stem, sizeof(stem), "%06zu.hst", i);
    json e;
    e["passage_id"] = p.id;
    e["tokens"] = "tokens.jsonl";
    if (entry.states) {
      if (entry.states->num_steps() != p.tokens.size()) {
        throw UsageError("passage " + p.id + ": state trace length differs from token count");
      }
      write_hst(out_dir / "states" / stem, *entry.states);
      e["states"] = std::string("states/") + stem;
      e["num_layers"] = entry.states->num_layers();
      e["dim"] = entry.states->dim();
    }
    if (entry.logits) {
      write_hst(out_dir / "logits" / stem, *entry.logits);
      e["logits"] = std::string("logits/") + stem;
    }
    entries.push_back(std::move(e));
  }
  write_text_file(out_dir / "tokens.jsonl", tokens.str());

  json manifest;
  manifest["format_version"] = Corpus::kFormatVersion;
  manifest["vocab_size"] = corpus.vocab_size;
  manifest["entries"] = std::move(entries);
  if (!corpus.state_layers.empty()) manifest["state_layers"] = corpus.state_layers;
  if (!corpus.metadata.empty()) manifest["metadata"] = corpus.metadata;
  if (!corpus.vocab.empty()) {
    write_text_file(out_dir / "vocab.json", json(corpus.vocab).dump() + "\n");
    manifest["vocab"] = "vocab.json";
  }
  const fs::path manifest_path = out_dir / "manifest.json";
  write_text_file(manifest_path, manifest.dump(2) + "\n");
  return manifest_path;
}

}  // namespace loopscope
