#pragma once

#include <cstdint>
#include <initializer_list>

namespace mixsep {

// Splittable counter-based generator (splitmix64 core). Streams are keyed by
// integer tuples such as (seed, split, sample index), so generation order is
// independent of iteration order and identical across platforms. All floating
// point output is derived from integer bits only.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t key) : state_(mix(key)) {}

  static SplitRng keyed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t k = 0x8f1bbcdcbfa53e0bULL;
    for (std::uint64_t p : parts) k = mix(k ^ mix(p + 0x9e3779b97f4a7c15ULL));
    return SplitRng(k);
  }

  // Child stream derived from the current state without advancing it.
  SplitRng split(std::uint64_t tag) const {
    return SplitRng(mix(state_ ^ mix(tag + 0xd1342543de82ef95ULL)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0,1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0,n). Modulo bias is irrelevant at the n used here.
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  bool coin(double p) { return uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace mixsep
