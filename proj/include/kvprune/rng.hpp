#pragma once

#include <cstdint>

namespace kvprune {

// splitmix64 finalizer (Steele et al.). Used to scramble seeds and to derive
// independent values from (seed, tag) pairs without carrying generator state.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// xorshift64* (Vigna 2014): shift triple 12/25/27, multiplier
// 0x2545f4914f6cdd1d. All randomness in the project flows through this
// generator so runs are reproducible bit-for-bit from a 64-bit seed.
class Xorshift64Star {
 public:
  explicit Xorshift64Star(std::uint64_t seed) : state_(mix64(seed)) {
    if (state_ == 0) state_ = 0x2545f4914f6cdd1dULL;  // xorshift state must be nonzero
  }

  std::uint64_t next_u64() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dULL;
  }

  // Uniform in [0, 1), 53 significant bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [-1, 1).
  double next_symmetric() { return 2.0 * next_unit() - 1.0; }

 private:
  std::uint64_t state_;
};

// One-shot uniform [0, 1) value derived from a key, for per-item parameters
// that must not depend on generator call order.
inline double unit_from_key(std::uint64_t key) {
  return static_cast<double>(mix64(key) >> 11) * 0x1.0p-53;
}

}  // namespace kvprune
