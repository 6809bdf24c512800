#pragma once

// Counter-based deterministic RNG. Every stream is addressed by a key folded
// from a master seed and up to two stream ids, and draw i is a pure function
// of (key, i), so parallel consumers can draw independently and reproduce
// byte-identical results regardless of scheduling.

#include <cmath>
#include <cstdint>

#include "sharpcert/linalg.hpp"

namespace sharpcert {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer: bijective 64-bit mix.
inline std::uint64_t mix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream1 = 0, std::uint64_t stream2 = 0)
      : key_(mix64(mix64(mix64(seed) + stream1) + stream2)) {}

  // i-th raw draw of this stream, independent of call order.
  std::uint64_t bits(std::uint64_t i) const { return mix64(key_ + (i + 1) * kGolden); }

  std::uint64_t next_bits() { return bits(counter_++); }

  // Uniform in (0,1): 53 mantissa bits, never exactly 0 or 1.
  double uniform01() {
    return (static_cast<double>(next_bits() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  // Standard normal via Box-Muller; draws two uniforms per pair and caches
  // the second value, so consumption order stays deterministic.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Vector normal_vector(int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  Matrix normal_matrix(int rows, int cols) {
    Matrix a(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) a(i, j) = normal();
    return a;
  }

  // Uniform point on the sphere of the given radius.
  Vector sphere_vector(int n, double radius) {
    Vector v = normal_vector(n);
    const double nrm = v.norm();
    if (nrm == 0.0) {
      v.setZero();
      v(0) = 1.0;
      return radius * v;
    }
    return (radius / nrm) * v;
  }

  // Fisher-Yates prefix: k distinct values from {0..n-1}.
  std::vector<int> choose(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k && i < n; ++i) {
      const int j = i + static_cast<int>(next_bits() % static_cast<std::uint64_t>(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sharpcert
