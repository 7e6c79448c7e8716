#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace concner {

// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xCBF29CE484222325ULL) noexcept;

// Seed for the stream identified by (seed, purpose, index). Streams for
// different purposes never share state, so adding a consumer of one stream
// cannot shift the draws of another.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                          std::uint64_t index = 0) noexcept;

// Thin wrapper over mt19937_64 with platform-independent conversions (the
// standard distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0)
      : engine_(derive_seed(seed, purpose, index)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n). n must be > 0.
  std::size_t below(std::size_t n);

  // Uniform in [lo, hi] inclusive.
  std::size_t between(std::size_t lo, std::size_t hi) {
    return lo + below(hi - lo + 1);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace concner
