#pragma once

#include <cstdint>
#include <vector>

namespace nawr {

// splitmix64 step; used to derive independent seed streams.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes a base seed with a stream id so distinct subsystems draw from
// disjoint deterministic streams.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t s = seed;
  (void)splitmix64(s);
  s ^= 0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL;
  return splitmix64(s);
}

// Deterministic generator with hand-rolled distributions. The standard
// library distributions are implementation-defined, which would break
// bitwise reproducibility across toolchains.
class DetRng {
 public:
  explicit DetRng(uint64_t seed) : state_(seed ^ 0x853c49e6748fea9bULL) {
    // warm up so nearby seeds decorrelate
    next();
    next();
  }

  uint64_t next() { return splitmix64(state_); }

  // uniform double in [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform double in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n); n must be positive
  uint64_t index_below(uint64_t n) { return next() % n; }

  // Fisher-Yates shuffle with a fixed visit order.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(index_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace nawr
