#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace dfr {

using Rng = std::mt19937_64;

// Seed derivation: every component seed is splitmix64 folded over
// (master, stream, index...). Sibling grid cells therefore get independent
// streams, and a cell's seed does not depend on which other cells ran.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

// Stream tags used with derive_seed.
enum class Stream : std::uint64_t {
  data = 1,
  split = 2,
  model_init = 3,
  train = 4,
  dropout_fr = 5,
  shuffle_ranker = 6,
  random_ranker = 7,
  deep_fs = 8,
  retrain = 9,
  masked_validation = 10,
};

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::initializer_list<std::uint64_t> rest = {}) {
  std::uint64_t s = derive_seed(master, {static_cast<std::uint64_t>(stream)});
  return rest.size() == 0 ? s : derive_seed(s, rest);
}

// Uniform in the open interval (0, 1); never returns 0 or 1.
double open_uniform(Rng& rng);

double standard_normal(Rng& rng);

// Uniformly random permutation of 0..n-1 (Fisher-Yates).
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

}  // namespace dfr
