#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace loopscope {

using TokenId = std::uint32_t;

// Real passages are drawn from the data distribution; generated passages come
// from a model conditioned on a real prefix. The distributions themselves are
// never materialized: a corpus is a finite sample of one of them.
enum class Origin { real, generated };
enum class Split { train, valid, test, synthetic };

std::string_view to_string(Origin origin);
std::string_view to_string(Split split);
Origin parse_origin(std::string_view text);
Split parse_split(std::string_view text);

struct Passage {
  std::string id;
  std::vector<TokenId> tokens;
  std::optional<std::string> text;
  Origin origin = Origin::real;
  // Number of leading tokens that were given as the condition. Zero for real
  // passages.
  std::size_t condition_len = 0;
  Split split = Split::synthetic;
  // For generated passages: id of the real passage whose prefix was the
  // condition.
  std::optional<std::string> source_id;

  // Throws UsageError when an invariant is violated.
  void validate() const;

  std::span<const TokenId> continuation() const {
    return std::span<const TokenId>(tokens).subspan(condition_len);
  }

  bool operator==(const Passage&) const = default;
};

/// Hidden states for one passage, stored [layer][time][dim].
class StateTrace {
 public:
  StateTrace(std::string passage_id, std::size_t num_layers, std::size_t num_steps,
             std::size_t dim, std::vector<float> values);

  const std::string& passage_id() const { return passage_id_; }
  std::size_t num_layers() const { return num_layers_; }
  std::size_t num_steps() const { return num_steps_; }
  std::size_t dim() const { return dim_; }

  std::span<const float> at(std::size_t layer, std::size_t step) const;
  std::span<const float> values() const { return values_; }

  bool operator==(const StateTrace&) const = default;

 private:
  std::string passage_id_;
  std::size_t num_layers_;
  std::size_t num_steps_;
  std::size_t dim_;
  std::vector<float> values_;
};

struct CorpusEntry {
  Passage passage;
  std::optional<StateTrace> states;
  // Per-step next-token logits, stored as a single-layer trace with
  // dim == vocab_size.
  std::optional<StateTrace> logits;

  bool operator==(const CorpusEntry&) const = default;
};

struct Corpus {
  static constexpr int kFormatVersion = 1;

  std::size_t vocab_size = 0;
  std::vector<CorpusEntry> entries;
  // Model layer number of each stored state layer. Empty means 0..L-1.
  std::vector<int> state_layers;
  // Optional token -> string table, used to render loops as text.
  std::vector<std::string> vocab;
  nlohmann::json metadata = nlohmann::json::object();

  // Index into the stored layers for a model layer number.
  std::size_t layer_index(int model_layer) const;
  std::string render(std::span<const TokenId> tokens) const;
};

/// Reads a manifest plus the token, state and logits files it references.
/// Throws LoadError naming the passage for missing files and FormatError for
/// malformed content or shape mismatches.
Corpus load_corpus(const std::filesystem::path& manifest_path);

/// Writes manifest.json, tokens.jsonl and one .hst per trace into out_dir.
/// Returns the manifest path.
std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir);

// .hst tensor files: a 16-byte little-endian header
//
//   bytes 0-1   magic "HS"
//   bytes 2-3   u16 format version (1)
//   bytes 4-7   u32 L
//   bytes 8-11  u32 T
//   bytes 12-15 u32 D
//
// followed by L*T*D little-endian IEEE-754 float32 values in [layer][time][dim]
// order.
inline constexpr std::uint16_t kHstVersion = 1;
inline constexpr std::size_t kHstHeaderBytes = 16;

void write_hst(const std::filesystem::path& path, const StateTrace& trace);
StateTrace read_hst(const std::filesystem::path& path, std::string passage_id);

}  // namespace loopscope
