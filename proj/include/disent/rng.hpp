#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace disent {

// Counter-based splittable RNG. A stream is identified by (seed, label);
// child streams are derived by label or index without touching the parent's
// counter, so dataset sampling, weight init and permutation draws stay
// independently reproducible. Integer path is platform-independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view stream = {})
      : key_(mix(seed ^ fnv1a(stream))) {}

  Rng child(std::string_view label) const {
    return Rng(from_key{}, key_ ^ mix(fnv1a(label)));
  }
  Rng child(std::uint64_t index) const {
    return Rng(from_key{}, key_ ^ mix(index + 0x1fb3c9d5a0e1u));
  }

  std::uint64_t next_u64() { return mix(key_ + counter_++ * 0x9e3779b97f4a7c15ull); }

  // uniform in [0,1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0,n), n > 0
  std::uint64_t uniform_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal via Box-Muller; always consumes two draws
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    return fnv1a(s.data(), s.size());
  }

  // chainable byte-range hash for file checksums
  static std::uint64_t fnv1a(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  struct from_key {};
  Rng(from_key, std::uint64_t key) : key_(key) {}

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace disent
