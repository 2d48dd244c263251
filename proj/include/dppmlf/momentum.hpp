#pragma once

// Per-sample momentum: each sample's gradient averaged over the last k
// parameter snapshots with normalized exponential weights, then clipped.

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "dppmlf/errors.hpp"
#include "dppmlf/models.hpp"
#include "dppmlf/numcore.hpp"

namespace dppmlf {

struct MomentumConfig {
  double beta = 0.1;
  std::size_t k = 2;

  void validate() const {
    if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("momentum: beta must lie in (0, 1]");
    if (k < 1) throw DomainError("momentum: k must be >= 1");
  }

  bool operator==(const MomentumConfig&) const = default;
};

/// Normalized weights beta^j / c_beta for lags j = 0..available-1, where
/// c_beta sums over the available window only. During warm-up (fewer than k
/// snapshots) the weights are renormalized so they still sum to one.
inline std::vector<double> momentum_weights(const MomentumConfig& cfg, std::size_t available) {
  cfg.validate();
  if (available == 0) throw UsageError("momentum_weights: no snapshots available");
  if (available > cfg.k) available = cfg.k;
  std::vector<double> w(available);
  double power = 1.0, c_beta = 0.0;
  for (std::size_t j = 0; j < available; ++j) {
    w[j] = power;
    c_beta += power;
    power *= cfg.beta;
  }
  for (double& v : w) v /= c_beta;
  return w;
}

/// The last k parameter vectors, newest last.
class ParamHistory {
 public:
  explicit ParamHistory(std::size_t k) : k_(k) {
    if (k == 0) throw DomainError("ParamHistory: k must be >= 1");
  }

  void push(ParamVector x) {
    if (!snapshots_.empty()) snapshots_.back().require_same_size(x);
    snapshots_.push_back(std::move(x));
    if (snapshots_.size() > k_) snapshots_.pop_front();
    ++pushes_;
  }

  std::size_t capacity() const noexcept { return k_; }
  std::size_t size() const noexcept { return snapshots_.size(); }
  bool empty() const noexcept { return snapshots_.empty(); }
  // Iteration index of the newest snapshot.
  std::size_t t() const noexcept { return pushes_ == 0 ? 0 : pushes_ - 1; }

  /// Snapshot x_{t-lag}.
  const ParamVector& at_lag(std::size_t lag) const {
    if (lag >= snapshots_.size()) throw UsageError("ParamHistory: lag " + std::to_string(lag) + " not stored");
    return snapshots_[snapshots_.size() - 1 - lag];
  }
  const ParamVector& newest() const { return at_lag(0); }

 private:
  std::size_t k_;
  std::deque<ParamVector> snapshots_;
  std::size_t pushes_ = 0;
};

/// v_t = sum_j w_j grad f(x_{t-j}, xi) over the stored snapshots. Costs
/// min(k, t + 1) gradient evaluations.
inline ParamVector per_sample_momentum(const Objective& obj, const Sample& xi, const ParamHistory& hist,
                                       const MomentumConfig& cfg) {
  if (hist.empty()) throw UsageError("per_sample_momentum: empty parameter history");
  const auto w = momentum_weights(cfg, std::min(hist.size(), cfg.k));
  ParamVector v = w[0] * obj.gradient(hist.at_lag(0), xi);
  for (std::size_t j = 1; j < w.size(); ++j) axpy(w[j], obj.gradient(hist.at_lag(j), xi), v);
  return v;
}

struct ClipConfig {
  double threshold = 1.0;

  void validate() const {
    if (!(threshold > 0.0) || !std::isfinite(threshold)) {
      throw DomainError("clip: threshold must be positive and finite");
    }
  }
};

/// v scaled to norm C when ||v|| > C, otherwise v unchanged.
inline ParamVector clip(ParamVector v, const ClipConfig& cfg) {
  cfg.validate();
  const double norm = l2_norm(v);
  if (norm > cfg.threshold) v *= cfg.threshold / norm;
  return v;
}

inline bool would_clip(const ParamVector& v, const ClipConfig& cfg) { return l2_norm(v) > cfg.threshold; }

/// Variance reduction factor rho = sqrt((1+b)(1-b^k) / ((1-b)(1+b^k))).
/// Equals 1 / sqrt(sum_j w_j^2) for the normalized weights; sqrt(k) at beta = 1.
inline double variance_reduction_rho(const MomentumConfig& cfg) {
  cfg.validate();
  const double k = static_cast<double>(cfg.k);
  if (cfg.beta == 1.0) return std::sqrt(k);
  const double one_minus = 1.0 - cfg.beta;
  // (1 - b^k) / (1 - b) without cancellation near b = 1.
  const double geometric = -std::expm1(k * std::log1p(-one_minus)) / one_minus;
  const double beta_k = std::pow(cfg.beta, k);
  return std::sqrt((1.0 + cfg.beta) * geometric / (1.0 + beta_k));
}

}  // namespace dppmlf
