#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace headliner {

// Error taxonomy. The CLI maps InputError/ValueError/ConfigError to exit
// code 1 and anything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A parameter outside its documented domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Bad run configuration (unknown key, dimension mismatch, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline std::uint64_t hash64(std::uint64_t seed, std::string_view label) {
  // FNV-1a over the label, mixed with the seed.
  std::uint64_t h = 14695981039346656037ull ^ seed;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

// Deterministic random stream. All randomness in the project flows through
// this wrapper; doubles are produced by bit manipulation of mt19937_64
// output rather than std::uniform_real_distribution, whose exact output is
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; depends only on the root seed and the label,
  /// not on how much the parent has been consumed.
  Rng fork(std::string_view label) const { return Rng(hash64(seed_, label)); }

  std::uint64_t seed() const { return seed_; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::swap(v[i], v[index(i + 1)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace headliner
