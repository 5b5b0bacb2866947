#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace volcnn {

/// Fixed stream ids so every consumer of randomness draws from its own sequence.
enum class Stream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kAugment = 3,
  kBootstrap = 4,
  kSynth = 5,
  kSubsample = 6,
  kGradcheck = 7,
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Deterministic random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The conversions to uniform reals, bounded integers and normals
/// are implemented here rather than through <random> distributions, which are
/// implementation-defined. A generator is identified by a 64-bit key; split()
/// derives child keys by splitmix64 mixing so substreams never overlap in
/// practice and do not depend on how much the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : Rng(seed, 0) {}
  Rng(std::uint64_t seed, std::uint64_t stream);

  Rng split(std::uint64_t stream) const;
  Rng split(Stream stream) const { return split(static_cast<std::uint64_t>(stream)); }

  std::uint64_t key() const noexcept { return key_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one normal per two uniforms, no caching).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

}  // namespace volcnn
