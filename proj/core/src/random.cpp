#include "ecborrow/random.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace ecborrow {

std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 1) throw std::invalid_argument("fold count must be positive");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> out(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    out[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(folds));
  }
  return out;
}

}  // namespace ecborrow
