#pragma once

// Deterministic random streams.
//
// Every (master_seed, replication, machine) triple owns an independent
// xoshiro256** stream. The stream seed is
//
//   s0 = splitmix64(master_seed)
//   s1 = splitmix64(s0 ^ (replication + 1) * 0x9E3779B97F4A7C15)
//   s2 = splitmix64(s1 ^ (machine     + 1) * 0xD1B54A32D192ED03)
//
// and the four xoshiro state words are the next four outputs of a splitmix64
// sequence started at s2. Results are bitwise reproducible inside this
// implementation; nothing is promised across languages.

#include <array>
#include <cstdint>
#include <limits>

namespace dhill {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t substream_seed(std::uint64_t master_seed, std::uint64_t replication,
                                       std::uint64_t machine) noexcept {
  std::uint64_t s = splitmix64(master_seed);
  s = splitmix64(s ^ ((replication + 1) * 0x9E3779B97F4A7C15ULL));
  s = splitmix64(s ^ ((machine + 1) * 0xD1B54A32D192ED03ULL));
  return s;
}

/// xoshiro256** (Blackman & Vigna). Satisfies UniformRandomBitGenerator.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed) noexcept {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      word = z ^ (z >> 31);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random mantissa bits. The top value 1 - 2^-53
  /// is rejected so that 1/(1-u) stays below 2^53.
  double uniform() noexcept {
    constexpr double scale = 0x1.0p-53;
    constexpr std::uint64_t top = (std::uint64_t{1} << 53) - 1;
    for (;;) {
      const std::uint64_t bits = (*this)() >> 11;
      if (bits != top) return static_cast<double>(bits) * scale;
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace dhill
