#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lsc {

// SplitMix64 generator. Used everywhere randomness is needed so that runs
// are reproducible from a single seed on any platform, independent of the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (no cached spare, keeps state linear).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  bool coin(double p = 0.5) { return uniform() < p; }

  // Fisher-Yates shuffle, deterministic for a given state.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream from (seed, tags...). Used to give every
  // (epoch, sample) its own generator so batch assembly can run in parallel.
  static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    Rng m(seed);
    uint64_t s = m.next_u64();
    s ^= Rng(a ^ 0x6A09E667F3BCC908ull).next_u64();
    s ^= Rng(b ^ 0xBB67AE8584CAA73Bull).next_u64();
    s ^= Rng(c ^ 0x3C6EF372FE94F82Bull).next_u64();
    return Rng(s);
  }

 private:
  uint64_t state_;
};

}  // namespace lsc
