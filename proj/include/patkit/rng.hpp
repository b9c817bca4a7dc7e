#pragma once

#include <cstdint>
#include <vector>

namespace patkit {

// Counter-based generator: the draw at (seed, counter) is a pure function of
// both, so sequences replay identically on any platform. Parallel consumers
// derive child streams instead of sharing one.
struct RngStream {
  uint64_t seed = 0;
  uint64_t counter = 0;

  RngStream() = default;
  explicit RngStream(uint64_t s) : seed(s) {}

  static uint64_t mix(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  uint64_t next_u64() {
    uint64_t x = seed + 0x9e3779b97f4a7c15ull * (++counter);
    return mix(x);
  }

  // uniform in [0, 1)
  double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Box-Muller pair, standard normal.
  void normal_pair(double& z0, double& z1);

  double normal() {
    double a, b;
    normal_pair(a, b);
    return a;
  }

  std::vector<double> normal_draws(size_t n, double sigma);

  RngStream child(uint64_t stream_id) const {
    return RngStream(mix(seed ^ (0xd1b54a32d192ed03ull * (stream_id + 1))));
  }
};

}  // namespace patkit
