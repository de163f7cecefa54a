#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ecborrow {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(mix_seed(base) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// Balanced fold ids in [0, folds): a seeded permutation dealt round-robin.
std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed);

}  // namespace ecborrow
