#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fhvae {

/// Named random streams. Every stochastic component draws from
/// `derive_seed(root, stream, counter)` so that runs are reproducible and a
/// resumed run sees the same numbers as an uninterrupted one.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSplit = 2,
  kCache = 3,
  kNoise = 4,
  kValidation = 5,
  kSynthWorld = 6,
  kSynthSample = 7,
  kProbe = 8,
  kFolds = 9,
  kDiscInit = 10,
  kIntent = 11,
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Expands a root seed into an independent seed for (stream, counter).
std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t counter = 0) noexcept;

/// xoshiro256** generator with portable uniform/normal/shuffle helpers.
/// Unlike the <random> distributions, all outputs are fully specified here,
/// so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (one draw per call).
  double normal() noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    shuffle(std::span<T>(items));
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace fhvae
