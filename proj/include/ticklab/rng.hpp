#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace ticklab {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::string_view purpose,
                                std::uint64_t index) {
  std::uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
  for (unsigned char ch : purpose) h = splitmix64(h ^ ch);
  return splitmix64(h ^ index);
}

// Deterministic substream generator keyed by (seed, purpose, index). Draws in
// one stream never depend on what other streams consume, so adding a new
// consumer cannot perturb existing paths.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view purpose = "",
               std::uint64_t index = 0)
      : gen_(stream_key(seed, purpose, index)) {}

  std::uint64_t bits() { return gen_(); }

  // uniform on (0, 1]
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. std::normal_distribution is not pinned by
  // the standard, so this keeps streams identical across toolchains.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * kPi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ticklab
