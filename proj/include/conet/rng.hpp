#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>

namespace conet {

/// Seeded pseudorandom source shared by every sampling routine.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are not portable across library
/// implementations, so integer, uniform, and normal draws are derived here
/// directly from the raw 64-bit words:
///   - uniform_index: rejection sampling on the top of the 64-bit range
///   - uniform: 53 high bits scaled to [0, 1)
///   - normal: Box-Muller, both variates used in order
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();

  /// Uniform in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  /// Standard normal.
  double normal();

  /// Independent stream keyed by (seed, stream). Depends only on the
  /// construction seed, never on how much of this stream was consumed.
  Rng derive(std::uint64_t stream) const;

  /// Fisher-Yates shuffle driven by uniform_index.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

/// SplitMix64 finalizer; used to mix seeds for derived streams.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace conet
