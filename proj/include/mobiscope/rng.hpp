#pragma once

#include <cmath>
#include <cstdint>

namespace mobiscope {

// Deterministic keyed RNG. Each (seed, stream, a, b) tuple yields an
// independent sequence, so per-device per-month generators produce identical
// output regardless of scheduling.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t a = 0,
                      std::uint64_t b = 0) {
    state_ = mix(seed ^ 0x2545F4914F6CDD1Dull);
    state_ = mix(state_ ^ mix(stream + 0x9E3779B97F4A7C15ull));
    state_ = mix(state_ ^ mix(a + 0xD1B54A32D192ED03ull));
    state_ = mix(state_ ^ mix(b + 0x8CB92BA72F3D8DD7ull));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    return mix(z);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double gauss() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cache_ = r * std::sin(a);
    has_cache_ = true;
    return r * std::cos(a);
  }

  // Product method; exact for moderate rates. Larger rates split so the
  // running product stays well above double underflow.
  std::uint32_t poisson(double lambda) {
    std::uint32_t total = 0;
    while (lambda > 60.0) {
      total += poisson_small(60.0);
      lambda -= 60.0;
    }
    return total + poisson_small(lambda);
  }

  // Marsaglia-Tsang; requires shape >= 1.
  double gamma(double shape) {
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = gauss();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Count with mean mu and variance dispersion*mu (Poisson-gamma mixture).
  std::uint32_t overdispersed_count(double mu, double dispersion) {
    if (mu <= 0.0) return 0;
    if (dispersion <= 1.0) return poisson(mu);
    double theta = dispersion - 1.0;
    double shape = mu / theta;
    double lambda = shape >= 1.0 ? gamma(shape) * theta : mu;  // shape<1 not used in practice
    return poisson(lambda);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint32_t poisson_small(double lambda) {
    if (lambda <= 0.0) return 0;
    double limit = std::exp(-lambda);
    double p = 1.0;
    std::uint32_t k = 0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  std::uint64_t state_ = 0;
  double cache_ = 0.0;
  bool has_cache_ = false;
};

}  // namespace mobiscope
