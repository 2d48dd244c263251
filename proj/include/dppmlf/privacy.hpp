#pragma once

// Gaussian mechanism, Renyi-DP accounting for Poisson-subsampled Gaussian
// releases, and noise calibration.
//
// Noise semantics: the optimizer adds N(0, sigma_dp^2 I) to the *average* of
// the clipped per-sample momenta. The average has l2 sensitivity C / B, so
// sigma_dp = sigma_multiplier * C / B where sigma_multiplier is the noise in
// units of sensitivity (the quantity the accountant reasons about).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dppmlf/errors.hpp"
#include "dppmlf/numcore.hpp"

namespace dppmlf {

/// sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon, for a single
/// release.
inline double gaussian_mechanism_sigma(double sensitivity, double epsilon, double delta) {
  if (!(sensitivity > 0.0)) throw DomainError("gaussian_mechanism_sigma: sensitivity must be > 0");
  if (!(epsilon > 0.0)) throw DomainError("gaussian_mechanism_sigma: epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("gaussian_mechanism_sigma: delta must lie in (0, 1)");
  return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// log(exp(a) - exp(b)) for a >= b.
inline double log_sub(double a, double b) {
  if (b == kNegInf) return a;
  if (a < b) throw NumericError("rdp: negative intermediate in log-space subtraction", {a, b});
  if (a == b) return kNegInf;
  return a + std::log(-std::expm1(b - a));
}

inline double log_erfc(double x) {
  if (x < 25.0) return std::log(std::erfc(x));
  const double x2 = x * x;
  return -x2 - std::log(x) - 0.5 * std::log(std::numbers::pi) +
         std::log1p(-1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2));
}

// log A_alpha for integer alpha: binomial expansion of E_{mu0}[(mu/mu0)^alpha].
inline double log_a_integer(double q, double sigma, long alpha) {
  double acc = kNegInf;
  const double lq = std::log(q), l1q = std::log1p(-q);
  const double la = std::lgamma(static_cast<double>(alpha) + 1.0);
  for (long i = 0; i <= alpha; ++i) {
    const double di = static_cast<double>(i);
    const double log_binom = la - std::lgamma(di + 1.0) - std::lgamma(static_cast<double>(alpha - i) + 1.0);
    const double term = log_binom + di * lq + static_cast<double>(alpha - i) * l1q + (di * di - di) / (2.0 * sigma * sigma);
    acc = log_add(acc, term);
  }
  return acc;
}

// log A_alpha for fractional alpha: two alternating series in erfc terms split
// at z0 = sigma^2 log(1/q - 1) + 1/2.
inline double log_a_fractional(double q, double sigma, double alpha) {
  double log_a0 = kNegInf, log_a1 = kNegInf;
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  const double lq = std::log(q), l1q = std::log1p(-q);
  double log_abs_coef = 0.0;
  bool positive = true;
  for (long i = 0; i < 1'000'000; ++i) {
    const double di = static_cast<double>(i);
    if (i > 0) {
      const double factor = (alpha - di + 1.0) / di;
      log_abs_coef += std::log(std::abs(factor));
      if (factor < 0) positive = !positive;
    }
    const double j = alpha - di;
    const double log_t0 = log_abs_coef + di * lq + j * l1q;
    const double log_t1 = log_abs_coef + j * lq + di * l1q;
    const double log_e0 = std::log(0.5) + log_erfc((di - z0) / (std::numbers::sqrt2 * sigma));
    const double log_e1 = std::log(0.5) + log_erfc((z0 - j) / (std::numbers::sqrt2 * sigma));
    const double log_s0 = log_t0 + (di * di - di) / (2.0 * sigma * sigma) + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
    if (positive) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0 && di > alpha) return log_add(log_a0, log_a1);
  }
  throw NumericError("rdp: fractional-order series did not converge");
}

}  // namespace detail

/// Renyi-DP at `order` of one Poisson-subsampled Gaussian release with
/// sampling rate q and noise multiplier sigma (sensitivity 1).
inline double rdp_subsampled_gaussian(double q, double sigma, double order) {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("rdp_subsampled_gaussian: q must lie in [0, 1]");
  if (!(sigma > 0.0)) throw DomainError("rdp_subsampled_gaussian: sigma must be > 0");
  if (!(order > 1.0)) throw DomainError("rdp_subsampled_gaussian: order must be > 1");
  if (q == 0.0) return 0.0;
  if (q == 1.0) return order / (2.0 * sigma * sigma);
  const double rounded = std::round(order);
  const double log_a = rounded == order ? detail::log_a_integer(q, sigma, static_cast<long>(rounded))
                                        : detail::log_a_fractional(q, sigma, order);
  const double rdp = log_a / (order - 1.0);
  if (!std::isfinite(rdp)) throw NumericError("rdp_subsampled_gaussian: divergent value", {rdp});
  return std::max(rdp, 0.0);
}

/// Orders the accountant evaluates: 1.5 ... 512.
inline const std::vector<double>& rdp_orders() {
  static const std::vector<double> orders = [] {
    std::vector<double> o{1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.5, 4.0, 4.5};
    for (int i = 5; i <= 64; ++i) o.push_back(i);
    for (double v : {72.0, 80.0, 96.0, 112.0, 128.0, 160.0, 192.0, 256.0, 320.0, 384.0, 448.0, 512.0}) {
      o.push_back(v);
    }
    return o;
  }();
  return orders;
}

struct RdpPoint {
  double order;
  double rdp;  // per step
};

struct Conversion {
  double epsilon;
  double order;
};

/// min over the orders of T * rdp(order) + log(1/delta) / (order - 1).
inline Conversion compose_and_convert(std::span<const RdpPoint> per_step, std::size_t steps, double delta) {
  if (steps < 1) throw DomainError("compose_and_convert: T must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("compose_and_convert: delta must lie in (0, 1)");
  Conversion best{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& pt : per_step) {
    const double eps = static_cast<double>(steps) * pt.rdp + std::log(1.0 / delta) / (pt.order - 1.0);
    if (eps < best.epsilon) best = {eps, pt.order};
  }
  return best;
}

inline std::vector<RdpPoint> rdp_curve(double q, double sigma, std::span<const double> orders = rdp_orders()) {
  std::vector<RdpPoint> out;
  out.reserve(orders.size());
  for (double o : orders) out.push_back({o, rdp_subsampled_gaussian(q, sigma, o)});
  return out;
}

/// (epsilon, delta) after T subsampled Gaussian steps.
inline Conversion epsilon_spent(double q, double sigma, std::size_t steps, double delta) {
  const auto curve = rdp_curve(q, sigma);
  return compose_and_convert(curve, steps, delta);
}

struct PrivacySpec {
  double epsilon = 1.0;
  double delta = 1e-5;
  double clip = 1.0;       // C
  double q = 0.01;         // B / n
  std::size_t steps = 1;   // T
  std::size_t batch = 1;   // nominal B

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("privacy: epsilon must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("privacy: delta must lie in (0, 1)");
    if (!(clip > 0.0) || !std::isfinite(clip)) throw ConfigError("privacy: clip threshold must be > 0");
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("privacy: q must lie in (0, 1]");
    if (steps < 1) throw ConfigError("privacy: T must be >= 1");
    if (batch < 1) throw ConfigError("privacy: batch must be >= 1");
  }
};

struct AccountantResult {
  double epsilon_target = 0.0;
  double epsilon_achieved = 0.0;
  double delta = 0.0;
  double sigma_multiplier = 0.0;
  double sigma_dp = 0.0;  // sigma_multiplier * C / B
  double best_order = 0.0;
  // q sqrt(T log(1/delta)) / epsilon, the asymptotic shape with the constant dropped.
  double asymptotic_reference = 0.0;
  std::vector<RdpPoint> audit;
};

inline constexpr double kCalibrationLower = 0.3;
inline constexpr double kCalibrationUpper = 1e4;
inline constexpr double kCalibrationBand = 0.995;

class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Accounting for a fixed noise multiplier.
inline AccountantResult account(const PrivacySpec& spec, double sigma_multiplier) {
  AccountantResult r;
  r.delta = spec.delta;
  r.sigma_multiplier = sigma_multiplier;
  r.sigma_dp = sigma_multiplier * spec.clip / static_cast<double>(spec.batch);
  r.audit = rdp_curve(spec.q, sigma_multiplier);
  const auto conv = compose_and_convert(r.audit, spec.steps, spec.delta);
  r.epsilon_achieved = conv.epsilon;
  r.epsilon_target = spec.epsilon;
  r.best_order = conv.order;
  r.asymptotic_reference =
      spec.q * std::sqrt(static_cast<double>(spec.steps) * std::log(1.0 / spec.delta)) / spec.epsilon;
  return r;
}

/// Smallest-ish noise multiplier in [0.3, 1e4] whose spent epsilon lands in
/// [0.995 eps, eps]. Bisection in log(sigma).
inline AccountantResult calibrate_noise(const PrivacySpec& spec) {
  spec.validate();
  auto eps_at = [&](double s) { return epsilon_spent(spec.q, s, spec.steps, spec.delta).epsilon; };
  const double lo_eps = eps_at(kCalibrationLower);
  const double hi_eps = eps_at(kCalibrationUpper);
  auto fail = [&](const std::string& why) {
    std::ostringstream os;
    os << "calibrate_noise: " << why << "; epsilon(" << kCalibrationLower << ") = " << lo_eps << ", epsilon("
       << kCalibrationUpper << ") = " << hi_eps << ", target " << spec.epsilon;
    throw CalibrationError(os.str());
  };
  if (hi_eps > spec.epsilon) fail("target needs more noise than the bracket allows");
  if (lo_eps < kCalibrationBand * spec.epsilon) fail("target reachable with less noise than the bracket allows");

  double lo = kCalibrationLower, hi = kCalibrationUpper;
  if (lo_eps <= spec.epsilon) return account(spec, lo);
  if (hi_eps >= kCalibrationBand * spec.epsilon) return account(spec, hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = std::sqrt(lo * hi);
    const double e = eps_at(mid);
    if (e > spec.epsilon) {
      lo = mid;
    } else if (e < kCalibrationBand * spec.epsilon) {
      hi = mid;
    } else {
      return account(spec, mid);
    }
  }
  fail("bisection did not settle");
  return {};
}

/// Opaque result of the noisy aggregation step. Only privatize_aggregate can
/// create one, so everything downstream (filter, parameter update) provably
/// sees nothing but privatized data.
class PrivatizedAggregate {
 public:
  const ParamVector& value() const noexcept { return value_; }

 private:
  explicit PrivatizedAggregate(ParamVector v) : value_(std::move(v)) {}
  friend PrivatizedAggregate privatize_aggregate(std::span<const ParamVector>, std::size_t, std::size_t, double,
                                                 RandomStream&);
  ParamVector value_;
};

/// (sum of clipped) / B_nominal + N(0, sigma_dp^2 I_d). An empty batch gives
/// pure noise.
inline PrivatizedAggregate privatize_aggregate(std::span<const ParamVector> clipped, std::size_t dim,
                                               std::size_t batch_nominal, double sigma_dp, RandomStream& stream) {
  if (batch_nominal == 0) throw DomainError("privatize_aggregate: nominal batch must be >= 1");
  if (!(sigma_dp >= 0.0)) throw DomainError("privatize_aggregate: sigma_dp must be >= 0");
  ParamVector sum(dim);
  for (const auto& v : clipped) sum += v;
  sum /= static_cast<double>(batch_nominal);
  if (sigma_dp > 0.0) sum += gaussian_vector(stream, dim, sigma_dp);
  return PrivatizedAggregate(std::move(sum));
}

}  // namespace dppmlf
