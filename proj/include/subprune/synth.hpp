#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "subprune/bundle.hpp"
#include "subprune/network.hpp"
#include "subprune/random.hpp"

namespace subprune {

inline constexpr const char* kDefaultArch = "mlp:20,64,48,10";

struct SynthOptions {
  std::string arch = kDefaultArch;
  std::size_t samples = 512;         // pruning batch
  std::size_t verify_samples = 512;  // appended after the pruning batch
  std::uint64_t seed = 0;
};

/// "mlp:d0,d1,...,dL" or "lenet-toy". Weights and biases are uniform in
/// [-a, a] with a = 1/sqrt(fan_in). Every weighted layer but the last is
/// prunable; hidden layers use relu.
NetworkModel make_teacher(const std::string& arch, SplitMix64& rng);

/// Teacher, standard normal inputs and argmax labels, with captures.
Bundle synthesize(const SynthOptions& opts);

}  // namespace subprune
