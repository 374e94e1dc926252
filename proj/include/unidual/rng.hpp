#pragma once

#include <cstdint>
#include <string_view>

namespace unidual {

// splitmix64. Self-contained so that streams are identical across standard
// libraries and platforms; everything random in the kit flows through this.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1) with 53 random bits.
  double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// Uniform integer in [0,n).
  uint64_t below(uint64_t n) {
    // 128-bit multiply-shift; bias is negligible for the small n used here.
    return uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

 private:
  uint64_t state_;
};

inline uint64_t hash_mix(uint64_t a, uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2);
  Rng r(a);
  return r.next_u64();
}

inline uint64_t hash_str(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : s) {
    h ^= uint8_t(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Derives an independent stream from (seed, tag, index).
inline Rng sub_rng(uint64_t seed, std::string_view tag, uint64_t index = 0) {
  return Rng(hash_mix(hash_mix(seed, hash_str(tag)), index));
}

}  // namespace unidual
