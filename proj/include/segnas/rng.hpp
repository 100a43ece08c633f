#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace segnas {

/// Deterministic random source. Wraps mt19937_64 with hand-rolled
/// distributions so that sampled values do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  Rng() : gen_(0) {}
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(gen_() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& text) {
    std::istringstream is(text);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

/// Stable seed derivation for sub-streams (per architecture, per purpose).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  // splitmix64 over the mixed inputs
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)) ^
                    (0xbf58476d1ce4e5b9ULL * (index + 1));
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace segnas
