#include "concner/rng.hpp"

namespace concner {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) noexcept {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                          std::uint64_t index) noexcept {
  return mix64(mix64(seed ^ fnv1a64(purpose)) + mix64(index + 1));
}

std::size_t Rng::below(std::size_t n) {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t bound = n;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = engine_();
    if (r >= threshold) return static_cast<std::size_t>(r % bound);
  }
}

}  // namespace concner
