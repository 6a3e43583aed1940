#ifndef SCMA_COMMON_HPP
#define SCMA_COMMON_HPP

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace scma {

using cplx = std::complex<double>;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data: bad codebook file, factor-graph structure, shape mismatch.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration (non-positive step counts, empty grids, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered while running a detector or training.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

/// Independent generator addressed by (seed, coordinates...). Two calls with
/// the same arguments produce identical streams; any differing coordinate gives
/// an unrelated stream. Used to give every (point, chunk) or (step, chunk) its
/// own substream so results do not depend on how work is split across threads.
inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * coords.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto c : coords) push(c);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Number of label combinations M^J, or 0 when it exceeds `limit`.
inline std::uint64_t combination_count(int M, int J, std::uint64_t limit) {
  std::uint64_t n = 1;
  for (int j = 0; j < J; ++j) {
    n *= static_cast<std::uint64_t>(M);
    if (n > limit) return 0;
  }
  return n;
}

/// Largest exhaustive enumeration the oracles and batch generator accept.
inline constexpr std::uint64_t kEnumerationLimit = std::uint64_t{1} << 24;

/// Largest per-resource hypothesis count M^dc the message tables accept.
inline constexpr std::uint64_t kResourceHypothesisLimit = std::uint64_t{1} << 20;

}  // namespace scma

#endif  // SCMA_COMMON_HPP
