#pragma once

#include <cstdint>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string_view>
#include <vector>

namespace advlab {

// Small counter-style RNG built on splitmix64. We avoid <random>
// distributions because their output sequences are implementation-defined;
// every stream here is a pure function of its seed, so runs are
// reproducible byte-for-byte.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  double gaussian(double mean, double stddev) {
    // Box-Muller; one fresh pair per call keeps the stream position
    // independent of call parity.
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // index in [0, n)
  std::uint64_t next_index(std::uint64_t n) { return next_u64() % n; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

inline std::uint64_t hash_bytes(const void* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  // FNV-1a
  const unsigned char* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed) { return seed; }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, Rest... rest) {
  Rng r(seed ^ (tag + 0x9e3779b97f4a7c15ULL));
  return mix_seed(r.next_u64(), rest...);
}

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, Rest... rest) {
  return mix_seed(seed, hash_bytes(tag.data(), tag.size()), rest...);
}

}  // namespace advlab
