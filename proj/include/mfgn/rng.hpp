#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mfgn {

// SplitMix64-based generator. Self-contained so that streams are
// bit-identical across platforms and standard-library versions; experiment
// reproducibility depends on that, std::mt19937 distributions do not
// guarantee it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Exponential with the given scale (mean). Inverse-CDF so the stream stays
  // portable.
  double exponential(double scale);

  // Standard normal via Box-Muller (two uniforms per call, no caching).
  double normal();

  bool bernoulli(double p) { return next_double() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream id from a base seed and indices, for
  // per-(molecule, trial) streams that agree between serial and parallel runs.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  // Stable 64-bit hash of a string, used to seed per-parameter-key
  // initialization deterministically.
  static std::uint64_t hash_string(const std::string& s);

 private:
  std::uint64_t state_;
};

}  // namespace mfgn
