#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace slm {

// Precondition or API misuse. These indicate a bug in calling code.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// A primitive produced NaN/Inf, or a loss term blew up at runtime.
struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic generator with self-contained distributions. The standard
// library distributions are implementation-defined, so everything that must
// reproduce byte-for-byte goes through this class instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    // xoshiro256** seeded via splitmix64
    std::uint64_t x = seed;
    for (auto& w : state_) {
      x = splitmix64(x);
      w = x;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1), safe for log()
  double uniform_open() {
    double u = uniform();
    return u > 0.0 ? u : 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * pi() * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // standard Gumbel(0,1): -log(-log(U))
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  // Marsaglia-Tsang
  double gamma(double a) {
    if (a <= 0.0) throw ContractViolation("Rng::gamma: shape must be positive");
    if (a < 1.0) {
      const double g = gamma(a + 1.0);
      return g * std::pow(uniform_open(), 1.0 / a);
    }
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  // [0, n)
  std::int64_t below(std::int64_t n) {
    if (n <= 0) throw ContractViolation("Rng::below: n must be positive");
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(below(i + 1))]);
    }
  }

  static constexpr double pi() { return 3.141592653589793238462643383279502884; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace slm
