#pragma once

// Linear (IIR) low-pass filter applied to the privatized gradient stream:
//
//   m_t   = -sum_{r=1}^{na} a_r m_{t-r} + sum_{r=0}^{nb} b_r vbar_{t-r}
//   c_m,t = -sum_{r=1}^{na} a_r c_m,t-r + sum_{r=0}^{nb} b_r           (terms with t-r >= 0)
//   mhat_t = m_t / c_m,t
//
// Everything before t = 0 is zero. The impulse response kappa_r of the filter
// gives m_t = sum_{r<=t} kappa_r vbar_{t-r} and c_m,t = sum_{r<=t} kappa_r.

#include <cmath>
#include <complex>
#include <cstddef>
#include <deque>
#include <sstream>
#include <string>
#include <vector>

#include "dppmlf/errors.hpp"
#include "dppmlf/numcore.hpp"

namespace dppmlf {

inline constexpr double kFilterGainTolerance = 1e-9;
inline constexpr double kFilterStabilityMargin = 1e-9;
inline constexpr double kMinBiasCorrection = 1e-12;
inline constexpr double kMaxImaginaryResidue = 1e-9;

/// Feedback coefficients a_1..a_na and feedforward coefficients b_0..b_nb.
struct FilterConfig {
  std::vector<double> a;
  std::vector<double> b{1.0};

  static FilterConfig identity() { return {{}, {1.0}}; }

  std::size_t feedback_order() const noexcept { return a.size(); }
  // n_b; b holds n_b + 1 coefficients.
  std::size_t feedforward_order() const noexcept { return b.empty() ? 0 : b.size() - 1; }

  bool is_identity() const noexcept { return a.empty() && b.size() == 1 && b[0] == 1.0; }

  /// -sum a_r + sum b_r, the gain at zero frequency.
  double dc_gain() const noexcept {
    double g = 0.0;
    for (double v : a) g -= v;
    for (double v : b) g += v;
    return g;
  }

  bool operator==(const FilterConfig&) const = default;
};

/// Roots of z^na + a_1 z^(na-1) + ... + a_na, the poles of the filter.
inline std::vector<std::complex<double>> filter_poles(const FilterConfig& cfg) {
  if (cfg.a.empty()) return {};
  std::vector<double> coeffs(cfg.a.rbegin(), cfg.a.rend());
  coeffs.push_back(1.0);
  return find_roots(Polynomial(std::move(coeffs)));
}

/// Throws ConfigError unless the filter preserves the signal mean and all
/// poles lie strictly inside the unit circle.
inline void validate(const FilterConfig& cfg) {
  if (cfg.b.empty()) throw ConfigError("filter: b must have at least one coefficient");
  for (double v : cfg.a) {
    if (!std::isfinite(v)) throw ConfigError("filter: non-finite coefficient in a");
  }
  for (double v : cfg.b) {
    if (!std::isfinite(v)) throw ConfigError("filter: non-finite coefficient in b");
  }
  const double gain = cfg.dc_gain();
  if (std::abs(gain - 1.0) > kFilterGainTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << "filter: gain -sum(a) + sum(b) = " << gain << ", must equal 1";
    throw ConfigError(os.str());
  }
  for (const auto& p : filter_poles(cfg)) {
    if (std::abs(p) >= 1.0 - kFilterStabilityMargin) {
      std::ostringstream os;
      os.precision(17);
      os << "filter: unstable pole " << p.real() << (p.imag() < 0 ? " - " : " + ") << std::abs(p.imag())
         << "i (|p| = " << std::abs(p) << ")";
      throw ConfigError(os.str());
    }
  }
}

namespace detail {

inline void add_scaled(double& acc, double c, double x) { acc += c * x; }
inline void add_scaled(ParamVector& acc, double c, const ParamVector& x) { axpy(c, x, acc); }
inline void check_same_shape(double, double) {}
inline void check_same_shape(const ParamVector& a, const ParamVector& b) { a.require_same_size(b); }

}  // namespace detail

/// Rolling histories for one filter instance. V is ParamVector for the
/// optimizer and double for scalar analysis. Histories are stored newest first
/// and only hold entries for non-negative time.
template <class V>
class FilterState {
 public:
  FilterState() = default;

  std::size_t signal_steps() const noexcept { return t_; }
  std::size_t correction_steps() const noexcept { return tc_; }

  const std::deque<V>& outputs() const noexcept { return m_history_; }
  const std::deque<V>& inputs() const noexcept { return v_history_; }
  const std::deque<double>& corrections() const noexcept { return c_history_; }

 private:
  template <class U>
  friend U filter_step(FilterState<U>&, const FilterConfig&, const U&);
  template <class U>
  friend double bias_correction_step(FilterState<U>&, const FilterConfig&);

  std::deque<V> m_history_;
  std::deque<V> v_history_;
  std::deque<double> c_history_;
  std::size_t t_ = 0;
  std::size_t tc_ = 0;
};

/// One step of the filter recursion; returns m_t and advances the state.
template <class V>
V filter_step(FilterState<V>& state, const FilterConfig& cfg, const V& v_bar) {
  if (cfg.b.empty()) throw ConfigError("filter: b must have at least one coefficient");
  if (!state.v_history_.empty()) detail::check_same_shape(state.v_history_.front(), v_bar);
  if (!state.m_history_.empty()) detail::check_same_shape(state.m_history_.front(), v_bar);

  V m = cfg.b[0] * v_bar;
  for (std::size_t r = 1; r <= cfg.feedforward_order() && r <= state.v_history_.size(); ++r) {
    detail::add_scaled(m, cfg.b[r], state.v_history_[r - 1]);
  }
  for (std::size_t r = 1; r <= cfg.feedback_order() && r <= state.m_history_.size(); ++r) {
    detail::add_scaled(m, -cfg.a[r - 1], state.m_history_[r - 1]);
  }

  if (cfg.feedforward_order() > 0) {
    state.v_history_.push_front(v_bar);
    if (state.v_history_.size() > cfg.feedforward_order()) state.v_history_.pop_back();
  }
  if (cfg.feedback_order() > 0) {
    state.m_history_.push_front(m);
    if (state.m_history_.size() > cfg.feedback_order()) state.m_history_.pop_back();
  }
  ++state.t_;
  return m;
}

/// c_m,t for the step about to be (or just) filtered. Called once per
/// filter_step; keeps its own time index.
template <class V>
double bias_correction_step(FilterState<V>& state, const FilterConfig& cfg) {
  double c = 0.0;
  for (std::size_t r = 0; r <= cfg.feedforward_order() && r <= state.tc_; ++r) c += cfg.b[r];
  for (std::size_t r = 1; r <= cfg.feedback_order() && r <= state.c_history_.size(); ++r) {
    c -= cfg.a[r - 1] * state.c_history_[r - 1];
  }
  if (cfg.feedback_order() > 0) {
    state.c_history_.push_front(c);
    if (state.c_history_.size() > cfg.feedback_order()) state.c_history_.pop_back();
  }
  ++state.tc_;
  return c;
}

/// m_t / c_m,t. Throws NumericError when c_m,t <= 1e-12.
template <class V>
V corrected_output(V m, double c_m) {
  if (!(c_m > kMinBiasCorrection)) {
    throw NumericError("corrected_output: bias correction " + std::to_string(c_m) + " is not positive");
  }
  m /= c_m;
  return m;
}

/// A configured filter with its state: one call per optimizer iteration.
class LowPassFilter {
 public:
  explicit LowPassFilter(FilterConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }

  struct Output {
    ParamVector filtered;   // m_t
    double correction;      // c_m,t
    ParamVector corrected;  // mhat_t
  };

  Output step(const ParamVector& v_bar) {
    ParamVector m = filter_step(state_, cfg_, v_bar);
    const double c = bias_correction_step(state_, cfg_);
    ParamVector corrected = corrected_output(m, c);
    return {std::move(m), c, std::move(corrected)};
  }

  const FilterConfig& config() const noexcept { return cfg_; }
  const FilterState<ParamVector>& state() const noexcept { return state_; }

 private:
  FilterConfig cfg_;
  FilterState<ParamVector> state_;
};

/// kappa_0..kappa_T. The normalized weights depend on the horizon t they are
/// normalized over, so they are served through kappa_hat(r, t) rather than
/// stored.
class ImpulseResponse {
 public:
  explicit ImpulseResponse(std::vector<double> kappa) : kappa_(std::move(kappa)), prefix_(kappa_.size()) {
    double acc = 0.0;
    for (std::size_t r = 0; r < kappa_.size(); ++r) prefix_[r] = acc += kappa_[r];
  }

  std::size_t horizon() const noexcept { return kappa_.empty() ? 0 : kappa_.size() - 1; }
  const std::vector<double>& kappa() const noexcept { return kappa_; }
  double kappa(std::size_t r) const { return kappa_.at(r); }

  /// sum_{r<=t} kappa_r, equal to c_m,t.
  double prefix_sum(std::size_t t) const { return prefix_.at(t); }

  /// kappa_r / sum_{s<=t} kappa_s for r <= t.
  double kappa_hat(std::size_t r, std::size_t t) const {
    if (r > t) throw UsageError("kappa_hat: r > t");
    return kappa_.at(r) / prefix_.at(t);
  }

  std::vector<double> normalized(std::size_t t) const {
    std::vector<double> out(t + 1);
    for (std::size_t r = 0; r <= t; ++r) out[r] = kappa_hat(r, t);
    return out;
  }

 private:
  std::vector<double> kappa_;
  std::vector<double> prefix_;
};

/// Raised when the partial-fraction path cannot be used (repeated poles).
class FallbackNeeded : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Impulse response from a unit impulse fed through the recursion. Exact for
/// every valid configuration.
inline ImpulseResponse impulse_response_recursive(const FilterConfig& cfg, std::size_t horizon) {
  FilterState<double> st;
  std::vector<double> kappa(horizon + 1);
  for (std::size_t r = 0; r <= horizon; ++r) kappa[r] = filter_step(st, cfg, r == 0 ? 1.0 : 0.0);
  return ImpulseResponse(std::move(kappa));
}

/// Impulse response from the pole/residue expansion
///
///   1 / (1 + sum a_r z^-r) = sum_j res_j / (1 - p_j z^-1),
///   kappa_r = sum_{r2 <= min(nb, r)} b_r2 sum_j res_j p_j^(r - r2).
///
/// With simple poles res_j = p_j^(na-1) / prod_{i != j} (p_j - p_i). Throws
/// FallbackNeeded for poles closer than 1e-7.
inline ImpulseResponse impulse_response_analytic(const FilterConfig& cfg, std::size_t horizon) {
  using cd = std::complex<double>;
  const std::size_t nb = cfg.feedforward_order();
  std::vector<double> kappa(horizon + 1, 0.0);
  if (cfg.a.empty()) {
    for (std::size_t r = 0; r <= std::min(nb, horizon); ++r) kappa[r] = cfg.b[r];
    return ImpulseResponse(std::move(kappa));
  }

  const auto poles = filter_poles(cfg);
  if (!roots_are_simple(poles)) {
    throw FallbackNeeded("impulse_response_analytic: repeated poles, use impulse_response_recursive");
  }
  const std::size_t na = poles.size();
  std::vector<cd> residue(na);
  for (std::size_t j = 0; j < na; ++j) {
    cd num(1.0), den(1.0);
    for (std::size_t e = 0; e + 1 < na; ++e) num *= poles[j];
    for (std::size_t i = 0; i < na; ++i) {
      if (i != j) den *= poles[j] - poles[i];
    }
    residue[j] = num / den;
  }

  // Denominator-only response h_r = sum_j res_j p_j^r.
  std::vector<cd> h(horizon + 1, 0.0);
  std::vector<cd> power(na, cd(1.0));
  for (std::size_t r = 0; r <= horizon; ++r) {
    for (std::size_t j = 0; j < na; ++j) {
      h[r] += residue[j] * power[j];
      power[j] *= poles[j];
    }
  }

  for (std::size_t r = 0; r <= horizon; ++r) {
    cd k(0.0);
    for (std::size_t r2 = 0; r2 <= std::min(nb, r); ++r2) k += cfg.b[r2] * h[r - r2];
    if (std::abs(k.imag()) >= kMaxImaginaryResidue) {
      throw NumericError("impulse_response_analytic: imaginary residue at r = " + std::to_string(r),
                         {k.imag()});
    }
    kappa[r] = k.real();
  }
  return ImpulseResponse(std::move(kappa));
}

/// Analytic path when the poles are simple, recursive otherwise.
inline ImpulseResponse impulse_response(const FilterConfig& cfg, std::size_t horizon) {
  try {
    return impulse_response_analytic(cfg, horizon);
  } catch (const FallbackNeeded&) {
    return impulse_response_recursive(cfg, horizon);
  }
}

}  // namespace dppmlf
