#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "ltr/error.hpp"

namespace ltr {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mixes a base seed with stream indices (epoch, batch, site) so that every
// randomized stage of a run owns an independent deterministic stream.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0,
                            uint64_t c = 0) {
  uint64_t s = splitmix64(base ^ 0x6a09e667f3bcc909ULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  return splitmix64(s ^ c);
}

// Deterministic random source. All library randomness goes through this class
// (never std::shuffle or std:: distributions, whose outputs are
// implementation-defined); mt19937_64's raw stream is pinned by the standard,
// so identical seeds reproduce identical runs on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform clamped into (eps, 1 - eps); used where log(U) must stay finite.
  double uniform_open(double eps = 1e-12) {
    double u = uniform();
    if (u < eps) return eps;
    if (u > 1.0 - eps) return 1.0 - eps;
    return u;
  }

  // Standard normal via Box-Muller; caches the second draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_open();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Standard Gumbel: -ln(-ln(U)), U clamped into (eps, 1-eps).
  double gumbel(double eps = 1e-12) {
    double u = uniform_open(eps);
    return -std::log(-std::log(u));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) fail(ErrorCode::InvalidConfig, "Rng::below: n must be > 0");
    uint64_t reject = (0ULL - n) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = gen_();
      if (r >= reject) return r % n;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ltr
