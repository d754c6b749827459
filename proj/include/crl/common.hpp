#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace crl {

/// Thrown by every precondition, validation and I/O failure in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Streaming check macro so messages can name the offending value without a
// formatting library (the toolchain here has no <format>).
#define CRL_CHECK(cond, msg)                 \
  do {                                       \
    if (!(cond)) {                           \
      std::ostringstream crl_oss_;           \
      crl_oss_ << msg;                       \
      throw ::crl::Error(crl_oss_.str());    \
    }                                        \
  } while (0)

/// splitmix64-style mixer; derives independent stream seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic random source.
///
/// All draws go through explicit integer-to-double conversions instead of
/// std::uniform_*_distribution, whose output is implementation-defined.
/// Identical seeds therefore give identical streams on any conforming
/// standard library, which the reproducibility guarantees depend on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. The sine mate is discarded on purpose:
  /// no hidden cache, so the draw count per call is always exactly two.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t integer(std::uint64_t n) {
    CRL_CHECK(n > 0, "Rng::integer: n must be positive");
    if (n == 1) return 0;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  bool coin() { return (engine_() & 1ull) != 0; }

  std::string state() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }

  void restore(const std::string& s) {
    std::istringstream iss(s);
    iss >> engine_;
    CRL_CHECK(!iss.fail(), "Rng::restore: malformed state string");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace crl
