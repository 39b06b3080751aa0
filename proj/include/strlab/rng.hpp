#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace strlab {

/**
 * Counter-based pseudo-random generator (splitmix64 finalizer over an
 * incrementing counter). Every module seeds its own instance explicitly;
 * there is no global state. Two instances with the same (seed, stream)
 * produce the same draws on any platform.
 */
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed, uint64_t stream = 0)
      : key_(seed + 0xD1B54A32D192ED03ULL * (stream + 1)) {}

  uint64_t next_u64() {
    return finalize(key_ + 0x9E3779B97F4A7C15ULL * ++counter_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two uniforms per pair.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    // Guard the log against u1 == 0.
    double r = std::sqrt(-2.0 * std::log1p(-u1) + 1e-300);
    double c = std::cos(6.283185307179586476925286766559 * u2);
    double s = std::sin(6.283185307179586476925286766559 * u2);
    spare_ = r * s;
    have_spare_ = true;
    return r * c;
  }

  // Inverse-CDF draw from a probability row. Rows are expected to sum to
  // one within kProbTol; leftover mass falls to the last positive entry.
  int sample(const double* probs, int n) {
    if (n <= 0) throw std::invalid_argument("sample: empty distribution");
    double u = next_double();
    double cum = 0.0;
    int last_pos = -1;
    for (int i = 0; i < n; ++i) {
      if (probs[i] > 0.0) last_pos = i;
      cum += probs[i];
      if (u < cum) return i;
    }
    if (last_pos < 0)
      throw std::invalid_argument("sample: distribution has no positive mass");
    return last_pos;
  }

  int sample(const std::vector<double>& probs) {
    return sample(probs.data(), int(probs.size()));
  }

  // Dirichlet(1,...,1) over k categories via normalized exponentials.
  std::vector<double> dirichlet_uniform(int k) {
    std::vector<double> w(static_cast<size_t>(k));
    double total = 0.0;
    for (auto& x : w) {
      x = -std::log1p(-next_double()) + 1e-300;
      total += x;
    }
    for (auto& x : w) x /= total;
    return w;
  }

 private:
  static uint64_t finalize(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace strlab
