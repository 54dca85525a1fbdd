#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace bme {

/// Deterministic 64-bit random stream.
///
/// Wraps std::mt19937_64 (whose output sequence the standard pins down
/// exactly) and derives doubles with hand-rolled transforms, because the
/// standard distribution adaptors are implementation-defined and would break
/// bit-reproducibility across standard libraries. Every stochastic component
/// in the library draws from this class with an explicit seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t integer() { return gen_(); }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard Box-Muller transform; caches the second deviate of each pair.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 step, used to derive independent stream seeds from a base seed
/// plus a stream tag so that adding a consumer never shifts another stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace bme
