#pragma once

#include <cstdint>
#include <random>

namespace echolab {

// Deterministic RNG with stateless child-stream derivation.
//
// Child streams are derived from the parent's seed, never from engine state,
// so sibling streams are independent of draw order and of each other. This is
// what makes batched rollouts reproducible under any parallel schedule.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Unbiased uniform integer in [0, bound). bound must be >= 1.
  std::uint64_t uniform_int(std::uint64_t bound) {
    // rejection sampling over the largest multiple of bound
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  std::uint64_t seed() const { return seed_; }

  // Derived stream for a given index; same (seed, stream) always yields the
  // same child regardless of how many draws the parent has made.
  Rng child(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

  // splitmix64 finalizer over a combined word
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace echolab
