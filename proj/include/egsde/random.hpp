#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "egsde/grid.hpp"

namespace egsde {

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based Gaussian source. Draw k of stream (seed, stream_id) is a pure
// function of (seed, stream_id, k), so trajectories can be advanced in any
// order or on any thread without changing their values.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id),
        key_(detail::mix64(detail::mix64(seed ^ 0x5851F42D4C957F2DULL) ^
                           detail::mix64(stream_id + detail::kGolden))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return bits(counter_++); }

  // Uniform on the open interval (0, 1).
  double uniform() { return to_unit(next_u64()); }

  // Box-Muller on two consecutive counters; the sine branch is discarded so
  // that every normal owns exactly two counters.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Grid gaussian(const Shape& shape) {
    Grid g(shape);
    for (double& v : g.values()) v = normal();
    return g;
  }

  // Derived stream for a sub-purpose (e.g. Monte Carlo draws vs. step noise).
  RandomStream fork(std::uint64_t lane) const {
    return RandomStream(seed_, detail::mix64(stream_id_ * 0x100000001B3ULL + lane + 1));
  }

 private:
  std::uint64_t bits(std::uint64_t k) const { return detail::mix64(key_ + k * detail::kGolden); }

  static double to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Grid gaussian(RandomStream& stream, const Shape& shape) { return stream.gaussian(shape); }

}  // namespace egsde
