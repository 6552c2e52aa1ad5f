#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace mfwgf {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based bit generator: the stream is a pure function of its key
/// (seed, a, b), so draws for particle b at iteration a do not depend on
/// which thread produced them or in what order.
class CounterStream {
 public:
  using result_type = std::uint64_t;

  CounterStream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept
      : counter_(splitmix64(seed ^ splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ULL)))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    counter_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = counter_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t counter_;
};

/// Seed derivation for independent sub-streams (restarts, chains, sweep members).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  return splitmix64(seed ^ splitmix64(salt * 0xD1B54A32D192ED03ULL + 1));
}

}  // namespace mfwgf
