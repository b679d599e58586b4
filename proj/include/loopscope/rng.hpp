#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace loopscope {

/// Portable random stream.
///
/// The engine is std::mt19937_64. Draws are built on it directly, not through
/// the <random> distributions:
///
///   uniform01()        = (next() >> 11) * 2^-53
///   uniform_below(n)   = next() % n, rejecting next() < (2^64 - n) % n
///
/// The Python exporter implements the same rules and picks the same mask
/// positions for a seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform01();
  std::uint64_t uniform_below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

/// Per-passage stream seed: base_seed XOR ordinal.
constexpr std::uint64_t passage_seed(std::uint64_t base_seed, std::uint64_t ordinal) {
  return base_seed ^ ordinal;
}

/// 64-bit FNV-1a, used to derive stage and passage seeds from names.
constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// Splits one top-level seed into independent per-stage seeds.
constexpr std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
  return seed ^ fnv1a(stage);
}

}  // namespace loopscope
