#pragma once
// Deterministic random number generation. All randomness in the library flows
// from a single 64-bit master seed through counter-derived streams, so results
// are reproducible bit-for-bit regardless of platform or thread scheduling.
// Core generator: xoshiro256** (Blackman & Vigna); seeding via splitmix64.
// Distribution transforms are implemented here rather than with <random>
// because the standard library does not pin distribution algorithms.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>

namespace epilna {

inline std::uint64_t splitmix64_next(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  Rng() : Rng(0x853C49E6748FEA9BULL) {}

  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64_next(x);
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // all-zero state is absorbing
  }

  // Derive an independent stream from (master, path of ids). Distinct id paths
  // give distinct, statistically independent generators; used to hand one
  // stream to each chain / replicate / purpose.
  static Rng stream(std::uint64_t master, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = master;
    (void)splitmix64_next(h);
    for (std::uint64_t id : ids) {
      h ^= 0xD1B54A32D192ED03ULL * (id + 0x632BE59BD9B4E019ULL);
      (void)splitmix64_next(h);
    }
    return Rng(h);
  }
  static Rng stream(std::uint64_t master, std::uint64_t id) { return stream(master, {id}); }

  // Scalar analogue of stream() for APIs that take a seed rather than a
  // generator; the extra mixing step keeps the derived seed's own stream
  // family disjoint from stream(master, ids).
  static std::uint64_t derive_seed(std::uint64_t master,
                                   std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = master;
    (void)splitmix64_next(h);
    for (std::uint64_t id : ids) {
      h ^= 0xD1B54A32D192ED03ULL * (id + 0x632BE59BD9B4E019ULL);
      (void)splitmix64_next(h);
    }
    return splitmix64_next(h);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on the open interval (0,1); never returns an exact endpoint.
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller (cosine branch only). Stateless beyond the core generator so a
  // serialized state fully determines the future draw sequence.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  // Marsaglia-Tsang squeeze method; shape < 1 handled by the boost relation.
  double gamma(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("gamma: shape/rate must be > 0");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a, 1.0);
    const double y = gamma(b, 1.0);
    return x / (x + y);
  }

  // Sequential inversion for small means, Hormann's PTRS transformed
  // rejection for large ones.
  long poisson(double mean) {
    if (!(mean >= 0.0)) throw std::invalid_argument("poisson: mean must be >= 0");
    if (mean == 0.0) return 0;
    if (mean < 10.0) {
      const double emu = std::exp(-mean);
      long k = 0;
      double prod = uniform();
      while (prod > emu) {
        prod *= uniform();
        ++k;
      }
      return k;
    }
    const double b = 0.931 + 2.53 * std::sqrt(mean);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::fabs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<long>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          kf * std::log(mean) - mean - std::lgamma(kf + 1.0))
        return static_cast<long>(kf);
    }
  }

  // Negative binomial with mean mu and size phi (variance mu + mu^2/phi),
  // drawn as a gamma-Poisson mixture.
  long neg_binomial(double mu, double phi) {
    if (mu <= 0.0) return 0;
    return poisson(gamma(phi, phi / mu));
  }

  std::array<std::uint64_t, 4> state() const { return {s_[0], s_[1], s_[2], s_[3]}; }
  void set_state(const std::array<std::uint64_t, 4>& s) {
    for (int i = 0; i < 4; ++i) s_[i] = s[i];
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

}  // namespace epilna
