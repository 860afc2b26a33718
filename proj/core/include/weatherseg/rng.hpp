#pragma once

#include <cstdint>

namespace weatherseg {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (seed, domain, index). All randomness in the
// library is keyed this way so results depend only on the inputs, never on
// call order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t domain,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ domain) ^ index);
}

}  // namespace weatherseg
