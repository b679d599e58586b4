#include "loopscope/rng.hpp"

#include <limits>

#include "loopscope/error.hpp"

namespace loopscope {

double Rng::uniform01() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_below(std::uint64_t n) {
  if (n == 0) throw UsageError("uniform_below: n must be positive");
  // (2^64 - n) % n, the count of low values that would bias the modulo.
  const std::uint64_t threshold = (std::numeric_limits<std::uint64_t>::max() - n + 1) % n;
  for (;;) {
    const std::uint64_t x = next();
    if (x >= threshold) return x % n;
  }
}

}  // namespace loopscope
