#pragma once

// Per-sample differentiable objectives for empirical risk minimization and the
// datasets they are evaluated on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dppmlf/errors.hpp"
#include "dppmlf/numcore.hpp"

namespace dppmlf {

struct Sample {
  std::vector<double> features;
  // Regression target, or class index stored as a double for classification.
  double label = 0.0;
};

/// Indexed samples with a fixed feature length. `num_classes == 0` marks a
/// regression dataset.
class Dataset {
 public:
  Dataset(std::vector<Sample> samples, std::size_t num_classes)
      : samples_(std::move(samples)), num_classes_(num_classes) {
    if (samples_.empty()) throw ConfigError("Dataset: needs at least one sample");
    feature_dim_ = samples_.front().features.size();
    if (feature_dim_ == 0) throw ConfigError("Dataset: feature length must be positive");
    for (const auto& s : samples_) {
      if (s.features.size() != feature_dim_) {
        throw DimensionError("Dataset: inconsistent feature length");
      }
    }
  }

  std::size_t size() const noexcept { return samples_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  bool is_classification() const noexcept { return num_classes_ > 0; }

  const Sample& operator[](std::size_t i) const noexcept { return samples_[i]; }
  const std::vector<Sample>& samples() const noexcept { return samples_; }

 private:
  std::vector<Sample> samples_;
  std::size_t feature_dim_ = 0;
  std::size_t num_classes_ = 0;
};

enum class ObjectiveKind { kLinearRegression, kLogisticRegression, kMlp1 };

inline constexpr std::size_t kMlpHiddenUnits = 32;

namespace detail {

// log(1 + exp(t)) without overflow.
inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// In-place softmax; returns log-sum-exp of the input.
inline double softmax_inplace(std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return mx + std::log(sum);
}

}  // namespace detail

/// A per-sample loss f(x, xi) with its exact gradient.
///
/// - linear regression: 0.5 (<x, u> - y)^2, d = p
/// - logistic regression: binary sigmoid NLL (d = p) for two classes,
///   multinomial softmax NLL (d = K p) otherwise
/// - mlp1: one tanh hidden layer of 32 units followed by softmax NLL,
///   parameters laid out as [W1 (32 x p), b1, W2 (K x 32), b2]
///
/// All kinds add 0.5 * lambda * ||x||^2. No intercept is fitted for the linear
/// models.
class Objective {
 public:
  Objective(ObjectiveKind kind, std::size_t feature_dim, std::size_t num_classes, double lambda = 0.0)
      : kind_(kind), p_(feature_dim), classes_(num_classes), lambda_(lambda) {
    if (p_ == 0) throw ConfigError("Objective: feature dimension must be positive");
    if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) throw ConfigError("Objective: lambda must be >= 0");
    if (kind_ != ObjectiveKind::kLinearRegression && classes_ < 2) {
      throw ConfigError("Objective: classification needs at least two classes");
    }
  }

  /// Objective matching a dataset's feature length and label type.
  static Objective for_dataset(ObjectiveKind kind, const Dataset& ds, double lambda = 0.0) {
    if (kind == ObjectiveKind::kLinearRegression) {
      return Objective(kind, ds.feature_dim(), 0, lambda);
    }
    if (!ds.is_classification()) throw ConfigError("Objective: classification objective on a regression dataset");
    return Objective(kind, ds.feature_dim(), ds.num_classes(), lambda);
  }

  ObjectiveKind kind() const noexcept { return kind_; }
  std::size_t feature_dim() const noexcept { return p_; }
  std::size_t num_classes() const noexcept { return classes_; }
  double lambda() const noexcept { return lambda_; }

  std::size_t dim() const noexcept {
    switch (kind_) {
      case ObjectiveKind::kLinearRegression:
        return p_;
      case ObjectiveKind::kLogisticRegression:
        return classes_ == 2 ? p_ : classes_ * p_;
      case ObjectiveKind::kMlp1:
        return kMlpHiddenUnits * p_ + kMlpHiddenUnits + classes_ * kMlpHiddenUnits + classes_;
    }
    return 0;
  }

  /// Starting point: zeros for the convex models, scaled Gaussian weights for
  /// the MLP (std 1/sqrt(fan_in), zero biases).
  ParamVector initial_point(RandomStream& stream) const {
    ParamVector x(dim());
    if (kind_ != ObjectiveKind::kMlp1) return x;
    const std::size_t h = kMlpHiddenUnits;
    ParamVector w1 = gaussian_vector(stream, h * p_, 1.0 / std::sqrt(static_cast<double>(p_)));
    ParamVector w2 = gaussian_vector(stream, classes_ * h, 1.0 / std::sqrt(static_cast<double>(h)));
    std::copy(w1.begin(), w1.end(), x.begin());
    std::copy(w2.begin(), w2.end(), x.begin() + static_cast<std::ptrdiff_t>(h * p_ + h));
    return x;
  }

  double loss(const ParamVector& x, const Sample& xi) const {
    check(x, xi);
    double value = 0.0;
    switch (kind_) {
      case ObjectiveKind::kLinearRegression: {
        const double r = linear_score(x, xi.features, 0) - xi.label;
        value = 0.5 * r * r;
        break;
      }
      case ObjectiveKind::kLogisticRegression:
        if (classes_ == 2) {
          value = detail::softplus(-label_sign(xi) * linear_score(x, xi.features, 0));
        } else {
          std::vector<double> z(classes_);
          for (std::size_t k = 0; k < classes_; ++k) z[k] = linear_score(x, xi.features, k * p_);
          value = detail::softmax_inplace(z) - linear_score(x, xi.features, class_of(xi) * p_);
        }
        break;
      case ObjectiveKind::kMlp1: {
        auto fw = mlp_forward(x, xi.features);
        const double raw = fw.logits[class_of(xi)];
        value = detail::softmax_inplace(fw.logits) - raw;
        break;
      }
    }
    return value + 0.5 * lambda_ * dot(x, x);
  }

  ParamVector gradient(const ParamVector& x, const Sample& xi) const {
    check(x, xi);
    ParamVector g(dim());
    const auto& u = xi.features;
    switch (kind_) {
      case ObjectiveKind::kLinearRegression: {
        const double r = linear_score(x, u, 0) - xi.label;
        for (std::size_t j = 0; j < p_; ++j) g[j] = r * u[j];
        break;
      }
      case ObjectiveKind::kLogisticRegression:
        if (classes_ == 2) {
          const double s = label_sign(xi);
          const double coef = -s * detail::sigmoid(-s * linear_score(x, u, 0));
          for (std::size_t j = 0; j < p_; ++j) g[j] = coef * u[j];
        } else {
          std::vector<double> z(classes_);
          for (std::size_t k = 0; k < classes_; ++k) z[k] = linear_score(x, u, k * p_);
          detail::softmax_inplace(z);
          z[class_of(xi)] -= 1.0;
          for (std::size_t k = 0; k < classes_; ++k) {
            for (std::size_t j = 0; j < p_; ++j) g[k * p_ + j] = z[k] * u[j];
          }
        }
        break;
      case ObjectiveKind::kMlp1:
        mlp_backward(x, xi, g);
        break;
    }
    if (lambda_ != 0.0) axpy(lambda_, x, g);
    return g;
  }

  /// Predicted class index (classification) or regression output.
  double predict(const ParamVector& x, const std::vector<double>& features) const {
    switch (kind_) {
      case ObjectiveKind::kLinearRegression:
        return linear_score(x, features, 0);
      case ObjectiveKind::kLogisticRegression: {
        if (classes_ == 2) return linear_score(x, features, 0) >= 0.0 ? 1.0 : 0.0;
        std::size_t best = 0;
        double best_score = linear_score(x, features, 0);
        for (std::size_t k = 1; k < classes_; ++k) {
          const double s = linear_score(x, features, k * p_);
          if (s > best_score) best = k, best_score = s;
        }
        return static_cast<double>(best);
      }
      case ObjectiveKind::kMlp1: {
        auto fw = mlp_forward(x, features);
        return static_cast<double>(std::max_element(fw.logits.begin(), fw.logits.end()) - fw.logits.begin());
      }
    }
    return 0.0;
  }

 private:
  struct MlpForward {
    std::vector<double> hidden;
    std::vector<double> logits;
  };

  void check(const ParamVector& x, const Sample& xi) const {
    if (x.size() != dim()) {
      throw DimensionError("Objective: parameter length " + std::to_string(x.size()) + ", expected " +
                           std::to_string(dim()));
    }
    if (xi.features.size() != p_) {
      throw DimensionError("Objective: feature length " + std::to_string(xi.features.size()) + ", expected " +
                           std::to_string(p_));
    }
  }

  std::size_t class_of(const Sample& xi) const {
    const auto c = static_cast<std::size_t>(xi.label);
    if (xi.label < 0.0 || c >= classes_ || static_cast<double>(c) != xi.label) {
      throw DomainError("Objective: label is not a valid class index");
    }
    return c;
  }

  double label_sign(const Sample& xi) const { return class_of(xi) == 1 ? 1.0 : -1.0; }

  double linear_score(const ParamVector& x, const std::vector<double>& u, std::size_t offset) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < p_; ++j) acc += x[offset + j] * u[j];
    return acc;
  }

  MlpForward mlp_forward(const ParamVector& x, const std::vector<double>& u) const {
    const std::size_t h = kMlpHiddenUnits;
    const std::size_t b1 = h * p_, w2 = b1 + h, b2 = w2 + classes_ * h;
    MlpForward fw{std::vector<double>(h), std::vector<double>(classes_)};
    for (std::size_t i = 0; i < h; ++i) {
      fw.hidden[i] = std::tanh(linear_score(x, u, i * p_) + x[b1 + i]);
    }
    for (std::size_t k = 0; k < classes_; ++k) {
      double acc = x[b2 + k];
      for (std::size_t i = 0; i < h; ++i) acc += x[w2 + k * h + i] * fw.hidden[i];
      fw.logits[k] = acc;
    }
    return fw;
  }

  void mlp_backward(const ParamVector& x, const Sample& xi, ParamVector& g) const {
    const std::size_t h = kMlpHiddenUnits;
    const std::size_t b1 = h * p_, w2 = b1 + h, b2 = w2 + classes_ * h;
    auto fw = mlp_forward(x, xi.features);
    std::vector<double>& dz = fw.logits;
    detail::softmax_inplace(dz);
    dz[class_of(xi)] -= 1.0;

    std::vector<double> dh(h, 0.0);
    for (std::size_t k = 0; k < classes_; ++k) {
      g[b2 + k] = dz[k];
      for (std::size_t i = 0; i < h; ++i) {
        g[w2 + k * h + i] = dz[k] * fw.hidden[i];
        dh[i] += x[w2 + k * h + i] * dz[k];
      }
    }
    for (std::size_t i = 0; i < h; ++i) {
      const double da = dh[i] * (1.0 - fw.hidden[i] * fw.hidden[i]);
      g[b1 + i] = da;
      for (std::size_t j = 0; j < p_; ++j) g[i * p_ + j] = da * xi.features[j];
    }
  }

  ObjectiveKind kind_;
  std::size_t p_;
  std::size_t classes_;
  double lambda_;
};

inline ParamVector per_sample_gradient(const Objective& obj, const ParamVector& x, const Sample& xi) {
  return obj.gradient(x, xi);
}

/// Mean loss over the whole dataset.
inline double full_batch_loss(const Objective& obj, const Dataset& ds, const ParamVector& x) {
  double acc = 0.0;
  for (const auto& s : ds.samples()) acc += obj.loss(x, s);
  return acc / static_cast<double>(ds.size());
}

inline ParamVector full_batch_gradient(const Objective& obj, const Dataset& ds, const ParamVector& x) {
  ParamVector g(obj.dim());
  for (const auto& s : ds.samples()) g += obj.gradient(x, s);
  g /= static_cast<double>(ds.size());
  return g;
}

/// Classification accuracy, or the coefficient of determination R^2 for
/// regression objectives.
inline double evaluate_accuracy(const Objective& obj, const Dataset& ds, const ParamVector& x) {
  if (obj.kind() != ObjectiveKind::kLinearRegression) {
    std::size_t correct = 0;
    for (const auto& s : ds.samples()) correct += obj.predict(x, s.features) == s.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(ds.size());
  }
  double mean = 0.0;
  for (const auto& s : ds.samples()) mean += s.label;
  mean /= static_cast<double>(ds.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& s : ds.samples()) {
    const double r = obj.predict(x, s.features) - s.label;
    ss_res += r * r;
    ss_tot += (s.label - mean) * (s.label - mean);
  }
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
}

struct GradientStatistics {
  ParamVector mean;
  // sqrt of (1/n) sum ||g_i - mean||^2
  double sigma = 0.0;
  double max_norm = 0.0;
};

/// Spread of per-sample gradients around the full-batch gradient at x. `sigma`
/// is the sampling-noise scale sigma_SGD used by the diagnostics.
inline GradientStatistics gradient_statistics(const Objective& obj, const Dataset& ds, const ParamVector& x) {
  std::vector<ParamVector> grads;
  grads.reserve(ds.size());
  GradientStatistics st{ParamVector(obj.dim())};
  for (const auto& s : ds.samples()) {
    grads.push_back(obj.gradient(x, s));
    st.mean += grads.back();
    st.max_norm = std::max(st.max_norm, l2_norm(grads.back()));
  }
  st.mean /= static_cast<double>(ds.size());
  double var = 0.0;
  for (const auto& g : grads) {
    const double dn = l2_norm(g - st.mean);
    var += dn * dn;
  }
  st.sigma = std::sqrt(var / static_cast<double>(ds.size()));
  return st;
}

/// Poisson subsampling: each index joins independently with probability B/n.
/// Consumes exactly n uniforms from the stream.
inline std::vector<std::size_t> batch_sample(const Dataset& ds, std::size_t batch, RandomStream& stream) {
  if (batch == 0 || batch > ds.size()) {
    throw ConfigError("batch_sample: batch size " + std::to_string(batch) + " outside [1, " +
                      std::to_string(ds.size()) + "]");
  }
  const double q = static_cast<double>(batch) / static_cast<double>(ds.size());
  std::vector<std::size_t> out;
  out.reserve(batch + batch / 2 + 8);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (stream.next_uniform() < q) out.push_back(i);
  }
  return out;
}

enum class SyntheticKind { kBlobs, kLinear };

/// Hidden weight vector used by make_synthetic(kLinear, ...). Reads a substream
/// so the caller's stream is left untouched.
inline ParamVector linear_ground_truth(std::size_t p, const RandomStream& stream) {
  RandomStream sub = stream.substream(0x77);
  return gaussian_vector(sub, p, 1.0);
}

/// Desk-scale datasets.
///
/// blobs: label sign s = +-1 with equal probability, features s * mu + noise * N(0, I)
/// where mu = (1, ..., 1) / sqrt(p), so the cluster means are 2 apart. The class
/// index stored is (s + 1) / 2.
///
/// linear: u ~ N(0, I), y = <w*, u> + N(0, noise^2) with w* = linear_ground_truth.
inline Dataset make_synthetic(SyntheticKind kind, std::size_t n, std::size_t p, double noise, RandomStream& stream) {
  if (n == 0 || p == 0) throw ConfigError("make_synthetic: n and p must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("make_synthetic: noise must be >= 0");
  std::vector<Sample> samples;
  samples.reserve(n);
  if (kind == SyntheticKind::kBlobs) {
    const double mu = 1.0 / std::sqrt(static_cast<double>(p));
    for (std::size_t i = 0; i < n; ++i) {
      const double s = stream.next_uniform() < 0.5 ? -1.0 : 1.0;
      ParamVector e = gaussian_vector(stream, p, noise);
      Sample smp{std::vector<double>(p), s > 0 ? 1.0 : 0.0};
      for (std::size_t j = 0; j < p; ++j) smp.features[j] = s * mu + e[j];
      samples.push_back(std::move(smp));
    }
    return Dataset(std::move(samples), 2);
  }
  const ParamVector w = linear_ground_truth(p, stream);
  for (std::size_t i = 0; i < n; ++i) {
    ParamVector u = gaussian_vector(stream, p, 1.0);
    const double y = dot(w, u) + gaussian_vector(stream, 1, noise)[0];
    samples.push_back(Sample{u.values(), y});
  }
  return Dataset(std::move(samples), 0);
}

/// Deterministic train/test split: the last `test_fraction` of the samples are
/// held out. Both parts keep at least one sample.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction = 0.2) {
  if (ds.size() < 2) return {ds, ds};
  auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * test_fraction));
  n_test = std::clamp<std::size_t>(n_test, 1, ds.size() - 1);
  const auto cut = ds.samples().begin() + static_cast<std::ptrdiff_t>(ds.size() - n_test);
  return {Dataset({ds.samples().begin(), cut}, ds.num_classes()),
          Dataset({cut, ds.samples().end()}, ds.num_classes())};
}

}  // namespace dppmlf
