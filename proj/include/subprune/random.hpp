#pragma once

#include <cstdint>
#include <vector>

namespace subprune {

/// SplitMix64 (Steele, Lea, Flood 2014). Increment 0x9E3779B97F4A7C15,
/// finalizer multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB with shifts
/// 30/27/31. Chosen because every language can reproduce it in a few lines.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Unbiased integer in [0, bound) by rejection of the low remainder band.
  std::uint64_t uniform_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  /// Double in [0, 1) from the top 53 bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Box-Muller; one draw per call (the second variate is discarded).
  double normal();

 private:
  std::uint64_t state_;
};

/// Uniformly random `count` distinct elements of `pool` (partial Fisher-Yates
/// on a copy), in draw order.
std::vector<std::size_t> sample_without_replacement(const std::vector<std::size_t>& pool,
                                                    std::size_t count, SplitMix64& rng);

}  // namespace subprune
