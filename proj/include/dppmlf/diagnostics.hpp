#pragma once

// Convergence-theory quantities: the step-size bound under which per-sample
// momentum reduces variance, the filter-induced ratios Gamma_DP / Gamma_SGD,
// and the four addends of the convergence bound (orders only, constants
// suppressed).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dppmlf/errors.hpp"
#include "dppmlf/filter.hpp"
#include "dppmlf/models.hpp"
#include "dppmlf/momentum.hpp"
#include "dppmlf/numcore.hpp"

namespace dppmlf {

/// sqrt(sigma_sgd^2 / (L^2 k^3 (C^2 + d sigma_dp^2))).
inline double max_step_size(double sigma_sgd, double lipschitz, std::size_t k, double clip, std::size_t d,
                            double sigma_dp) {
  if (!(sigma_sgd > 0.0) || !(lipschitz > 0.0) || k == 0 || !(clip > 0.0) || d == 0) {
    throw DomainError("max_step_size: sigma_sgd, L, k, C and d must be positive");
  }
  if (!(sigma_dp >= 0.0)) throw DomainError("max_step_size: sigma_dp must be >= 0");
  const double kk = static_cast<double>(k);
  return std::sqrt(sigma_sgd * sigma_sgd /
                   (lipschitz * lipschitz * kk * kk * kk * (clip * clip + static_cast<double>(d) * sigma_dp * sigma_dp)));
}

/// Momentum-weighted gradient auto-correlation sum_j w_j c_{r+j} over the full
/// window of k weights.
inline double c_hat(std::span<const double> c, const MomentumConfig& cfg, std::size_t r) {
  if (c.size() < r + cfg.k) {
    throw UsageError("c_hat: correlation sequence needs " + std::to_string(r + cfg.k) + " entries, got " +
                     std::to_string(c.size()));
  }
  const auto w = momentum_weights(cfg, cfg.k);
  double acc = 0.0;
  for (std::size_t j = 0; j < cfg.k; ++j) acc += w[j] * c[r + j];
  return acc;
}

inline std::vector<double> c_hat_sequence(std::span<const double> c, const MomentumConfig& cfg, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t r = 0; r < count; ++r) out[r] = c_hat(c, cfg, r);
  return out;
}

/// Correlation model c_r = gamma^r.
inline std::vector<double> geometric_correlation(double gamma, std::size_t length) {
  if (!(gamma >= 0.0)) throw DomainError("geometric_correlation: gamma must be >= 0");
  std::vector<double> c(length);
  double v = 1.0;
  for (auto& x : c) {
    x = v;
    v *= gamma;
  }
  return c;
}

/// Empirical c_r = mean_t <g_t, g_{t-r}> / ||g_t||^2 over a recorded
/// full-gradient trajectory. For reporting only.
inline std::vector<double> empirical_correlation(std::span<const ParamVector> gradients, std::size_t max_lag) {
  std::vector<double> c(max_lag + 1, 0.0);
  for (std::size_t r = 0; r <= max_lag; ++r) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t t = r; t < gradients.size(); ++t) {
      const double nn = dot(gradients[t], gradients[t]);
      if (nn == 0.0) continue;
      acc += dot(gradients[t], gradients[t - r]) / nn;
      ++count;
    }
    c[r] = count ? acc / static_cast<double>(count) : 0.0;
  }
  return c;
}

class DegenerateCorrelation : public Error {
 public:
  using Error::Error;
};

struct GammaRatios {
  double gamma_dp = 0.0;
  double gamma_sgd = 0.0;
};

/// Gamma_DP  = sum_t sum_{r<=t} kh_r c_r / sum_t sum_{r<=t} kh_r^2
/// Gamma_SGD = sum_t sum_{r<=t} kh_r c_r / sum_t sum_{r<=t} kh_r / c_r
/// with kh_r = kappa_r / sum_{s<=t} kappa_s normalized per horizon t, t < T.
inline GammaRatios gamma_ratios(const ImpulseResponse& ir, std::span<const double> c_hat_seq, std::size_t horizon) {
  if (horizon == 0) throw UsageError("gamma_ratios: horizon must be >= 1");
  if (ir.horizon() + 1 < horizon) throw UsageError("gamma_ratios: impulse response shorter than horizon");
  if (c_hat_seq.size() < horizon) throw UsageError("gamma_ratios: c_hat sequence shorter than horizon");

  double weighted = 0.0, squared = 0.0, inverse = 0.0;
  double kc = 0.0, kk = 0.0, k_over_c = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    const double k = ir.kappa(t);
    const double c = c_hat_seq[t];
    if (c == 0.0 && k != 0.0) {
      throw DegenerateCorrelation("gamma_ratios: c_hat_" + std::to_string(t) + " = 0 with nonzero filter weight");
    }
    kc += k * c;
    kk += k * k;
    if (k != 0.0) k_over_c += k / c;
    const double s = ir.prefix_sum(t);
    weighted += kc / s;
    squared += kk / (s * s);
    inverse += k_over_c / s;
  }
  return {weighted / squared, weighted / inverse};
}

struct BoundInputs {
  double f0_gap = 1.0;  // f(x_0) - f*
  double eta = 0.5;
  std::size_t steps = 1;
  double lipschitz = 1.0;
  double clip = 1.0;
  std::size_t dim = 1;
  double sigma_dp = 0.0;
  double grad_bound = 1.0;  // G
  double sigma_sgd = 1.0;
  double rho = 1.0;
  double gamma_dp = 1.0;
  double gamma_sgd = 1.0;
};

struct BoundTerms {
  double optimization = 0.0;    // (f0 - f*) / (eta T)
  double clipping = 0.0;        // L eta C^2
  double dp_noise = 0.0;        // L eta d sigma_dp^2 / Gamma_DP
  double bias_gradient = 0.0;   // G^2 / Gamma_SGD
  double bias_variance = 0.0;   // sigma_sgd^2 / (rho^2 Gamma_SGD)

  double bias() const noexcept { return bias_gradient + bias_variance; }
  double total() const noexcept { return optimization + clipping + dp_noise + bias(); }
};

inline BoundTerms convergence_bound_terms(const BoundInputs& in) {
  BoundTerms b;
  b.optimization = in.f0_gap / (in.eta * static_cast<double>(in.steps));
  b.clipping = in.lipschitz * in.eta * in.clip * in.clip;
  b.dp_noise = in.lipschitz * in.eta * static_cast<double>(in.dim) * in.sigma_dp * in.sigma_dp / in.gamma_dp;
  b.bias_gradient = in.grad_bound * in.grad_bound / in.gamma_sgd;
  b.bias_variance = in.sigma_sgd * in.sigma_sgd / (in.rho * in.rho * in.gamma_sgd);
  return b;
}

struct EstimatedConstants {
  double sigma_sgd = 0.0;
  double grad_bound = 0.0;  // max per-sample gradient norm
  double lipschitz = 0.0;
};

inline constexpr int kLipschitzProbes = 64;

/// Empirical sigma_SGD, G and L at x. L is the largest gradient-difference
/// ratio over 64 probes; each probe direction after the first follows the
/// previous gradient difference, so the probes track the top curvature
/// direction the way power iteration would.
inline EstimatedConstants estimate_constants(const Objective& obj, const Dataset& ds, const ParamVector& x,
                                             std::uint64_t seed = 0x1ab5eedULL) {
  const auto stats = gradient_statistics(obj, ds, x);
  EstimatedConstants out;
  out.sigma_sgd = stats.sigma;
  out.grad_bound = stats.max_norm;

  RandomStream stream(seed);
  const double step = 1e-4 * (1.0 + l2_norm(x));
  ParamVector dir = gaussian_vector(stream, obj.dim(), 1.0);
  for (int probe = 0; probe < kLipschitzProbes; ++probe) {
    const double nd = l2_norm(dir);
    if (nd == 0.0) dir = gaussian_vector(stream, obj.dim(), 1.0);
    dir *= step / l2_norm(dir);
    ParamVector diff = full_batch_gradient(obj, ds, x + dir) - stats.mean;
    out.lipschitz = std::max(out.lipschitz, l2_norm(diff) / step);
    dir = std::move(diff);
  }
  return out;
}

struct DiagnosticsInputs {
  MomentumConfig momentum;
  FilterConfig filter{{-0.9}, {0.1}};
  std::vector<double> correlation;  // c_0, c_1, ... at least horizon + k - 1 long
  std::size_t horizon = 64;
  BoundInputs bound;
};

struct TheoryDiagnostics {
  double rho = 0.0;
  double eta_max = 0.0;
  double gamma_dp = 0.0;
  double gamma_sgd = 0.0;
  BoundTerms terms;
};

/// Everything the diag command prints. `bound.rho` and the Gamma fields of
/// `bound` are recomputed from the momentum and filter settings.
inline TheoryDiagnostics compute_theory_diagnostics(const DiagnosticsInputs& in) {
  validate(in.filter);
  TheoryDiagnostics d;
  d.rho = variance_reduction_rho(in.momentum);
  d.eta_max = max_step_size(in.bound.sigma_sgd, in.bound.lipschitz, in.momentum.k, in.bound.clip, in.bound.dim,
                            in.bound.sigma_dp);
  const auto ir = impulse_response(in.filter, in.horizon);
  const auto ch = c_hat_sequence(in.correlation, in.momentum, in.horizon);
  const auto g = gamma_ratios(ir, ch, in.horizon);
  d.gamma_dp = g.gamma_dp;
  d.gamma_sgd = g.gamma_sgd;
  BoundInputs b = in.bound;
  b.rho = d.rho;
  b.gamma_dp = d.gamma_dp;
  b.gamma_sgd = d.gamma_sgd;
  d.terms = convergence_bound_terms(b);
  return d;
}

}  // namespace dppmlf
