#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dualuv {

/// mt19937_64 with portable conversions. The standard distributions are
/// implementation-defined, so samples are derived from raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) without modulo bias. bound > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % bound;
  }

  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a 64-bit of a string.
std::uint64_t hash_name(std::string_view name);

/// Seed for an independent named stream derived from a master seed.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name);

}  // namespace dualuv
