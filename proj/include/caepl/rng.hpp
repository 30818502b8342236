#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "caepl/error.hpp"

namespace caepl {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic splitmix64 stream. Identical seed plus identical draw
// sequence gives identical outputs; every stochastic operation in the
// library draws from one of these, usually a substream from derive().
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

  static constexpr const char* algorithm() { return "splitmix64"; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

  std::uint64_t next_u64() {
    ++draws_;
    state_ += 0x9E3779B97F4A7C15ULL;
    return detail::mix64(state_);
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi). Rejection-free modulo is fine here: ranges
  // are tiny compared to 2^64 so the bias is far below anything observable.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) throw ParamError("uniform_int: empty range");
    return lo + static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(hi - lo));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, one value per call so the draw count stays predictable.
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
  }

  // Independent substream keyed by integer tags; never advances this stream.
  template <class... Tags>
  RngStream derive(Tags... tags) const {
    std::uint64_t h = detail::mix64(seed_ ^ 0xA0761D6478BD642FULL);
    ((h = detail::mix64(h ^ static_cast<std::uint64_t>(tags))), ...);
    return RngStream(h);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  std::uint64_t draws_ = 0;
};

}  // namespace caepl
