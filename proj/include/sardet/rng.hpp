#pragma once

#include <cmath>
#include <cstdint>

#include "sardet/common.hpp"

namespace sardet {

// Seedable generator with fully specified distributions so that streams are
// reproducible bit-for-bit across builds. All randomness in the project flows
// through instances of this class; independent substreams are derived with
// child().
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // splitmix64 warmup decorrelates small seeds
    for (int i = 0; i < 4; ++i) next_u64();
  }

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw ParameterError("uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller (one value per call; no cached pair so the
  // stream position is a pure function of the call count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 handled with the usual
  // boost by U^(1/shape).
  double gamma(double shape) {
    if (shape <= 0.0) throw ParameterError("gamma: shape must be positive");
    if (shape < 1.0) {
      double u = uniform();
      u = u > 0.0 ? u : 0x1.0p-53;
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Independent substream. Deriving the same id twice gives the same stream.
  Rng child(uint64_t stream_id) const {
    uint64_t mixed = state_ ^ (0x9e3779b97f4a7c15ull * (stream_id + 0x632be59bd9b4e019ull));
    mixed = (mixed ^ (mixed >> 33)) * 0xff51afd7ed558ccdull;
    return Rng(mixed ^ (mixed >> 29));
  }

 private:
  uint64_t state_;
};

}  // namespace sardet
