#pragma once

// Dense vector arithmetic, counter-based random streams and polynomial root
// finding. Everything else in dppmlf is built on these primitives.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dppmlf/errors.hpp"

namespace dppmlf {

/// A flat real vector of fixed length d > 0.
///
/// Holds model parameters and every gradient-shaped quantity (per-sample
/// gradients, momenta, noise, filter outputs). Binary arithmetic requires
/// equal lengths and throws DimensionError otherwise.
class ParamVector {
 public:
  explicit ParamVector(std::size_t d) : values_(d, 0.0) {
    if (d == 0) throw DimensionError("ParamVector: dimension must be positive");
  }
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DimensionError("ParamVector: dimension must be positive");
  }
  ParamVector(std::initializer_list<double> values) : ParamVector(std::vector<double>(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  ParamVector& operator+=(const ParamVector& o) {
    require_same_size(o);
    for (std::size_t i = 0; i < size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  ParamVector& operator-=(const ParamVector& o) {
    require_same_size(o);
    for (std::size_t i = 0; i < size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  ParamVector& operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
  }
  ParamVector& operator/=(double s) noexcept {
    for (double& v : values_) v /= s;
    return *this;
  }

  void fill(double v) noexcept { std::fill(values_.begin(), values_.end(), v); }

  bool operator==(const ParamVector&) const = default;

  void require_same_size(const ParamVector& o) const {
    if (o.size() != size()) {
      throw DimensionError("ParamVector: length mismatch " + std::to_string(size()) + " vs " +
                           std::to_string(o.size()));
    }
  }

 private:
  std::vector<double> values_;
};

inline ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
inline ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
inline ParamVector operator*(double s, ParamVector v) { return v *= s; }
inline ParamVector operator*(ParamVector v, double s) { return v *= s; }

inline double dot(const ParamVector& u, const ParamVector& v) {
  u.require_same_size(v);
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

inline double l2_norm(const ParamVector& v) noexcept {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// y += alpha * x
inline void axpy(double alpha, const ParamVector& x, ParamVector& y) {
  y.require_same_size(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(const ParamVector& v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Counter-based pseudo random stream.
///
/// Draw i is a pure function of (seed, i): the SplitMix64 finalizer applied to
/// seed + (i + 1) * golden-gamma. The state is just the pair, so a stream can be
/// copied, compared and replayed exactly.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix(seed_ + counter_ * kGamma);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double next_uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Independent stream for a named purpose (noise, batches, init, ...).
  RandomStream substream(std::uint64_t tag) const noexcept {
    return RandomStream(mix(seed_ ^ mix(tag + kGamma)));
  }

  bool operator==(const RandomStream&) const = default;

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// d independent N(0, sigma^2) draws via the Marsaglia polar method.
///
/// Normals are produced in pairs; when d is odd the spare of the last pair is
/// discarded. sigma == 0 returns zeros without touching the stream.
inline ParamVector gaussian_vector(RandomStream& stream, std::size_t d, double sigma) {
  if (!(sigma >= 0.0)) throw DomainError("gaussian_vector: sigma must be >= 0");
  ParamVector out(d);
  if (sigma == 0.0) return out;
  std::size_t i = 0;
  while (i < d) {
    double u, v, s;
    do {
      u = 2.0 * stream.next_uniform() - 1.0;
      v = 2.0 * stream.next_uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    out[i++] = sigma * u * f;
    if (i < d) out[i++] = sigma * v * f;
  }
  return out;
}

/// Real polynomial, coefficients in ascending degree order.
class Polynomial {
 public:
  explicit Polynomial(std::vector<double> coefficients) : coeffs_(std::move(coefficients)) {
    while (coeffs_.size() > 1 && coeffs_.back() == 0.0) coeffs_.pop_back();
    if (coeffs_.empty()) coeffs_.push_back(0.0);
  }

  std::size_t degree() const noexcept { return coeffs_.size() - 1; }
  const std::vector<double>& coefficients() const noexcept { return coeffs_; }
  double leading() const noexcept { return coeffs_.back(); }

  double max_abs_coefficient() const noexcept {
    double m = 0.0;
    for (double c : coeffs_) m = std::max(m, std::abs(c));
    return m;
  }

  template <class T>
  T operator()(T z) const {
    T acc(coeffs_.back());
    for (std::size_t i = coeffs_.size() - 1; i-- > 0;) acc = acc * z + T(coeffs_[i]);
    return acc;
  }

  /// Value and first derivative at z (Horner).
  std::pair<std::complex<double>, std::complex<double>> eval_with_derivative(
      std::complex<double> z) const {
    std::complex<double> p(coeffs_.back()), dp(0.0);
    for (std::size_t i = coeffs_.size() - 1; i-- > 0;) {
      dp = dp * z + p;
      p = p * z + coeffs_[i];
    }
    return {p, dp};
  }

 private:
  std::vector<double> coeffs_;
};

/// Monic polynomial with the given complex roots, expanded to complex
/// coefficients (ascending order).
inline std::vector<std::complex<double>> expand_roots(std::span<const std::complex<double>> roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i + 1] += c[i];
      next[i] -= r * c[i];
    }
    c = std::move(next);
  }
  return c;
}

inline constexpr int kRootMaxIterations = 500;
inline constexpr double kRootResidualTolerance = 1e-9;
inline constexpr double kRepeatedRootDistance = 1e-7;

/// All complex roots of p, with multiplicity (Aberth-Ehrlich iteration).
///
/// Initial guesses sit on a circle of radius 1 + max|c_i / c_n| with a
/// deterministic pseudo random phase jitter. Throws NumericError carrying the
/// final residuals if |p(root)| <= 1e-9 max|c| is not reached in 500 sweeps.
inline std::vector<std::complex<double>> find_roots(const Polynomial& p) {
  using cd = std::complex<double>;
  const std::size_t n = p.degree();
  if (n < 1) throw DomainError("find_roots: polynomial degree must be >= 1");

  const double lead = p.leading();
  double radius = 0.0;
  for (std::size_t i = 0; i < n; ++i) radius = std::max(radius, std::abs(p.coefficients()[i] / lead));
  radius += 1.0;

  RandomStream jitter(0x5eedf00dULL);
  std::vector<cd> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * (static_cast<double>(i) + 0.25) / static_cast<double>(n) +
                         0.3 * (jitter.next_uniform() - 0.5);
    z[i] = std::polar(radius, angle);
  }

  const double scale = p.max_abs_coefficient();
  std::vector<double> residuals(n);
  auto update_residuals = [&] {
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      residuals[i] = std::abs(p(z[i]));
      worst = std::max(worst, residuals[i]);
    }
    return worst;
  };

  for (int iter = 0; iter < kRootMaxIterations; ++iter) {
    double max_step = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto [val, deriv] = p.eval_with_derivative(z[i]);
      if (val == cd(0.0)) continue;
      cd repulsion(0.0);
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) repulsion += 1.0 / (z[i] - z[j]);
      }
      cd step;
      if (deriv == cd(0.0)) {
        step = cd(1e-8 * (1.0 + std::abs(z[i])), 1e-8);
      } else {
        const cd newton = val / deriv;
        step = newton / (1.0 - newton * repulsion);
      }
      if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) continue;
      z[i] -= step;
      max_step = std::max(max_step, std::abs(step) / (1.0 + std::abs(z[i])));
    }
    if (max_step < 1e-15) break;
  }

  if (update_residuals() > kRootResidualTolerance * scale) {
    throw NumericError("find_roots: no convergence after " + std::to_string(kRootMaxIterations) +
                           " iterations",
                       residuals);
  }

  // Conjugate pairs: snap tiny imaginary parts of real roots.
  for (auto& r : z) {
    if (std::abs(r.imag()) <= 1e-14 * (1.0 + std::abs(r.real()))) r = cd(r.real(), 0.0);
  }
  return z;
}

/// True when every pair of roots is farther apart than `min_distance`.
inline bool roots_are_simple(std::span<const std::complex<double>> roots,
                             double min_distance = kRepeatedRootDistance) {
  for (std::size_t i = 0; i < roots.size(); ++i) {
    for (std::size_t j = i + 1; j < roots.size(); ++j) {
      if (std::abs(roots[i] - roots[j]) <= min_distance) return false;
    }
  }
  return true;
}

}  // namespace dppmlf
