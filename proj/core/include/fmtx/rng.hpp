#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace fmtx {

// Counter-based deterministic RNG. A stream is identified by
// (seed, name, epoch); draws inside a stream are sequential. Because the
// state is a pure function of those three values plus the draw counter,
// any consumer can be re-created mid-run (e.g. when resuming training at
// step k) and reproduce the exact same values.
class Rng {
 public:
  Rng(uint64_t seed, std::string_view stream, uint64_t epoch = 0)
      : state_(mix(mix(seed ^ 0x9e3779b97f4a7c15ULL, fnv1a(stream)), epoch)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix_final(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), n > 0.
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; consumes two draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    return mix_final(a + 0x9e3779b97f4a7c15ULL * (b + 1));
  }
  static uint64_t mix_final(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t state_;
};

}  // namespace fmtx
