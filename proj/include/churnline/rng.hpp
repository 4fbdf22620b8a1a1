#pragma once

#include <cstdint>

namespace churnline {

// Deterministic splitmix64 stream. Self-contained so trace replay is
// byte-identical regardless of standard-library internals.
struct rng {
  std::uint64_t state = 0;

  explicit rng(std::uint64_t seed = 0) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). n must be nonzero.
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

// Stable 64-bit mix of two values, used for per-id derived randomness (e.g.
// level assignment) so it is independent of draw order.
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  rng r(a ^ (b * 0x9e3779b97f4a7c15ULL) ^ 0x5851f42d4c957f2dULL);
  r.next();
  return r.next();
}

}  // namespace churnline
