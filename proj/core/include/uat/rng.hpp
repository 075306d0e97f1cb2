#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace uat {

using Rng = std::mt19937_64;

// Derives an independent seed for a named sub-stream of a top-level seed.
// The same (seed, name) pair always yields the same stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

}  // namespace uat
