#ifndef GRCN_RNG_HPP
#define GRCN_RNG_HPP

#include <cstdint>
#include <string>

namespace grcn {

// SplitMix64 finalizer; the mixing primitive behind Rng.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so any part of a run can be replayed without
// replaying the draws before it. Integer arithmetic only, identical output
// on every platform.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream), counter_(0) {}

  // Stream id derived from a label, e.g. Rng(seed, Rng::stream("init:conv1.w")).
  static std::uint64_t stream(const std::string& label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t next_u64() {
    std::uint64_t c = counter_++;
    return splitmix64(seed_ ^ splitmix64(stream_ ^ splitmix64(c)));
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n), n > 0. Modulo bias is irrelevant at the
  // sample sizes used here.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_;
};

}  // namespace grcn

#endif  // GRCN_RNG_HPP
