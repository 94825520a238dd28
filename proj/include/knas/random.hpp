#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace knas {

using Rng = std::mt19937_64;

// Independent random streams derived from one user seed. Each consumer of
// randomness owns a stream tag, and per-item streams add the item's id, so
// results never depend on evaluation order or thread count.
enum class Stream : std::uint32_t {
  arch_sampling = 1,
  init = 2,
  scoring_batch = 3,
  mgm_sampling = 4,
  split_shuffle = 5,
  training = 6,
  permutation = 7,
  data_gen = 8,
  flow = 9,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> ids = {}) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                   static_cast<std::uint32_t>(stream)};
  for (std::uint64_t id : ids) {
    words.push_back(static_cast<std::uint32_t>(id));
    words.push_back(static_cast<std::uint32_t>(id >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// A 64-bit seed for a sub-task, e.g. the init seed of one genotype in a search.
inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> ids = {}) {
  Rng rng = make_rng(seed, stream, ids);
  return rng();
}

}  // namespace knas
