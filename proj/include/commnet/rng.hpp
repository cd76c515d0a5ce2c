#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace commnet {

/// Deterministic 64-bit generator (splitmix64). One u64 of state; identical
/// seed and call sequence give an identical stream on every platform, which
/// is what makes runs replayable bit-for-bit.
///
/// Constants are Vigna's splitmix64 finalizer. Gaussian sampling is the
/// Box-Muller transform of two uniforms (the sine half is discarded so the
/// state stays a single u64).
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t state() const { return state_; }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return finalize(state_);
  }

  /// Child stream: a pure function of (parent state, index); does not
  /// advance the parent.
  Rng split(std::uint64_t index) const {
    return Rng(finalize(state_ ^ finalize(index + 0xD1B54A32D192ED03ull)));
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double gaussian() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  /// Index sampled proportionally to weights. Weights must be nonnegative
  /// with a positive sum.
  std::size_t categorical(const double* weights, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double w = weights[i];
      if (!(w >= 0.0))
        throw std::invalid_argument("categorical: negative or NaN weight");
      total += w;
    }
    if (!(total > 0.0))
      throw std::invalid_argument("categorical: weights sum to zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    // u landed on the accumulated rounding slack; last positive weight wins.
    for (std::size_t i = n; i-- > 0;)
      if (weights[i] > 0.0) return i;
    return 0;
  }

  std::size_t categorical(const std::vector<double>& weights) {
    return categorical(weights.data(), weights.size());
  }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  static std::uint64_t finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

private:
  std::uint64_t state_;
};

/// Sample k distinct values from [0, n) without replacement (partial
/// Fisher-Yates over an index vector).
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                           std::size_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace commnet
