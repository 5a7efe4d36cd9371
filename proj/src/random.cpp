#include "subprune/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace subprune {

double SplitMix64::normal() {
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> sample_without_replacement(const std::vector<std::size_t>& pool,
                                                    std::size_t count, SplitMix64& rng) {
  if (count > pool.size()) throw std::invalid_argument("sample larger than pool");
  std::vector<std::size_t> items = pool;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(count);
  return items;
}

}  // namespace subprune
