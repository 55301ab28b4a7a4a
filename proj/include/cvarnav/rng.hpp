#pragma once

// Deterministic random streams. Each run derives independent substreams
// (environment, exploration, batch sampler, weight init) from one master
// seed via splitmix64 mixing, so ablations that share a master seed see
// identical randomness in every dimension they do not themselves change.

#include <cmath>
#include <cstdint>
#include <random>

namespace cvarnav {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; always consumes exactly two uniforms
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // multiply-shift; bias is negligible for n << 2^64 and identical across runs
    unsigned __int128 m = static_cast<unsigned __int128>(gen_()) * n;
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cvarnav
