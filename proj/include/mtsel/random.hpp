#pragma once

// Seeded random streams. A stream is identified by a key tuple, so unrelated
// consumers (noise, costs, user picks) never share state.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace mtsel {

using Rng = std::mt19937_64;

inline Rng make_rng(std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * key.size());
  for (std::uint64_t k : key) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace mtsel
