#pragma once

// Training loops: DP-PMLF and the baselines obtained by switching off its
// components.
//
//   per iteration t:
//     B_t      <- Poisson sample with rate B / n
//     v_xi     <- per-sample momentum over the last k snapshots, clipped to C
//     vbar_t   <- sum(v_xi) / B + N(0, sigma_dp^2 I)
//     mhat_t   <- low-pass filter + bias correction of vbar_t
//     x_{t+1}  <- x_t - eta * mhat_t

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "dppmlf/errors.hpp"
#include "dppmlf/filter.hpp"
#include "dppmlf/idx.hpp"
#include "dppmlf/models.hpp"
#include "dppmlf/momentum.hpp"
#include "dppmlf/numcore.hpp"
#include "dppmlf/privacy.hpp"

namespace dppmlf {

enum class Variant { kDpPmlf, kDpsgd, kDpPmlfNoPm, kDpPmlfNoLf };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kDpPmlf:
      return "dp-pmlf";
    case Variant::kDpsgd:
      return "dpsgd";
    case Variant::kDpPmlfNoPm:
      return "dp-pmlf-no-pm";
    case Variant::kDpPmlfNoLf:
      return "dp-pmlf-no-lf";
  }
  return "unknown";
}

inline std::optional<Variant> parse_variant(const std::string& s) {
  for (Variant v : {Variant::kDpPmlf, Variant::kDpsgd, Variant::kDpPmlfNoPm, Variant::kDpPmlfNoLf}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

enum class DatasetKind { kBlobs, kLinear, kIdx };

struct IdxPaths {
  std::string train_images, train_labels, test_images, test_labels;
  bool operator==(const IdxPaths&) const = default;
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kBlobs;
  std::size_t n = 2000;
  std::size_t p = 20;
  double noise = 1.0;
  std::uint64_t seed = 1;  // data generation, independent of the run seed
  IdxPaths paths;
  bool operator==(const DatasetSpec&) const = default;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Synthetic data holds out its last 20% for testing; IDX data uses its own
/// test files.
inline DataSplit materialize(const DatasetSpec& spec) {
  if (spec.kind == DatasetKind::kIdx) {
    return {load_idx(spec.paths.train_images, spec.paths.train_labels),
            load_idx(spec.paths.test_images, spec.paths.test_labels)};
  }
  RandomStream stream(spec.seed);
  const auto kind = spec.kind == DatasetKind::kBlobs ? SyntheticKind::kBlobs : SyntheticKind::kLinear;
  auto [train, test] = split_train_test(make_synthetic(kind, spec.n, spec.p, spec.noise, stream), 0.2);
  return {std::move(train), std::move(test)};
}

inline constexpr double kDivergenceLoss = 1e12;

struct RunConfig {
  Variant variant = Variant::kDpPmlf;
  ObjectiveKind objective = ObjectiveKind::kLogisticRegression;
  double lambda = 0.0;
  DatasetSpec dataset;
  double eta = 0.5;
  std::size_t batch = 27;
  std::size_t epochs = 25;
  MomentumConfig momentum;
  FilterConfig filter{{-0.9}, {0.1}};
  double clip = 1.0;
  double epsilon = 1.0;
  std::optional<double> delta;             // defaults to 1 / n_train
  std::optional<double> noise_multiplier;  // skips calibration when set; 0 disables noise
  std::uint64_t seed = 1;
  // Loss and gradient norm per row are computed on the first this-many
  // training samples; 0 means all of them.
  std::size_t metrics_samples = 0;

  bool operator==(const RunConfig&) const = default;

  /// Momentum window the variant actually runs with.
  MomentumConfig effective_momentum() const {
    if (variant == Variant::kDpsgd || variant == Variant::kDpPmlfNoPm) return {momentum.beta, 1};
    return momentum;
  }
  FilterConfig effective_filter() const {
    if (variant == Variant::kDpsgd || variant == Variant::kDpPmlfNoLf) return FilterConfig::identity();
    return filter;
  }

  std::size_t iterations(std::size_t n_train) const { return epochs * ((n_train + batch - 1) / batch); }

  void validate(std::size_t n_train) const {
    momentum.validate();
    dppmlf::validate(filter);
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("run: eta must be > 0");
    if (batch < 1 || batch > n_train) {
      throw ConfigError("run: batch " + std::to_string(batch) + " outside [1, " + std::to_string(n_train) + "]");
    }
    if (epochs < 1) throw ConfigError("run: epochs must be >= 1");
    if (!(clip > 0.0)) throw ConfigError("run: clip threshold must be > 0");
    if (!(epsilon > 0.0)) throw ConfigError("run: epsilon must be > 0");
    if (delta && !(*delta > 0.0 && *delta < 1.0)) throw ConfigError("run: delta must lie in (0, 1)");
    if (noise_multiplier && !(*noise_multiplier >= 0.0)) throw ConfigError("run: noise_multiplier must be >= 0");
  }
};

struct TraceRow {
  std::size_t t = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double clip_frac = 0.0;
  double update_norm = 0.0;
  std::size_t batch_size = 0;
};

struct TrainReport {
  std::vector<TraceRow> rows;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  AccountantResult privacy;
  double wall_clock_seconds = 0.0;
  std::optional<ParamVector> final_params;
  // Parameter vector after every update (x_1..x_T), only when requested.
  std::vector<ParamVector> trajectory;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, TrainReport partial)
      : Error(what), partial_(std::make_shared<TrainReport>(std::move(partial))) {}
  const TrainReport& partial() const noexcept { return *partial_; }

 private:
  std::shared_ptr<TrainReport> partial_;
};

struct TrainOptions {
  bool record_trajectory = false;
};

namespace detail {

inline std::pair<double, double> loss_and_grad_norm(const Objective& obj, const Dataset& ds, const ParamVector& x,
                                                    std::size_t limit) {
  const std::size_t n = limit == 0 ? ds.size() : std::min(limit, ds.size());
  double loss = 0.0;
  ParamVector g(obj.dim());
  for (std::size_t i = 0; i < n; ++i) {
    loss += obj.loss(x, ds[i]);
    g += obj.gradient(x, ds[i]);
  }
  return {loss / static_cast<double>(n), l2_norm(g) / static_cast<double>(n)};
}

}  // namespace detail

/// Noise calibration for a run on n_train samples.
inline AccountantResult run_privacy(const RunConfig& cfg, std::size_t n_train) {
  PrivacySpec spec;
  spec.epsilon = cfg.epsilon;
  spec.delta = cfg.delta.value_or(1.0 / static_cast<double>(n_train));
  spec.clip = cfg.clip;
  spec.q = static_cast<double>(cfg.batch) / static_cast<double>(n_train);
  spec.steps = cfg.iterations(n_train);
  spec.batch = cfg.batch;
  spec.validate();
  if (!cfg.noise_multiplier) return calibrate_noise(spec);
  if (*cfg.noise_multiplier == 0.0) {
    AccountantResult r;
    r.epsilon_target = spec.epsilon;
    r.epsilon_achieved = std::numeric_limits<double>::infinity();
    r.delta = spec.delta;
    return r;
  }
  return account(spec, *cfg.noise_multiplier);
}

/// Runs the configured variant on a fixed train/test split. Deterministic in
/// cfg.seed.
inline TrainReport train(const RunConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                         const TrainOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate(train_set.size());
  const Objective obj = Objective::for_dataset(cfg.objective, train_set, cfg.lambda);
  const MomentumConfig mcfg = cfg.effective_momentum();
  const ClipConfig ccfg{cfg.clip};
  LowPassFilter filter(cfg.effective_filter());

  TrainReport report;
  report.privacy = run_privacy(cfg, train_set.size());
  const double sigma_dp = report.privacy.sigma_dp;
  const std::size_t steps = cfg.iterations(train_set.size());

  RandomStream root(cfg.seed);
  RandomStream batch_stream = root.substream(1);
  RandomStream noise_stream = root.substream(2);
  RandomStream init_stream = root.substream(3);

  ParamHistory history(mcfg.k);
  history.push(obj.initial_point(init_stream));
  report.rows.reserve(steps);

  for (std::size_t t = 0; t < steps; ++t) {
    const ParamVector& x = history.newest();
    TraceRow row;
    row.t = t;
    std::tie(row.loss, row.grad_norm) = detail::loss_and_grad_norm(obj, train_set, x, cfg.metrics_samples);
    if (!std::isfinite(row.loss) || row.loss > kDivergenceLoss || !all_finite(x)) {
      report.final_params = x;
      throw DivergenceError("train: diverged at t = " + std::to_string(t) + " (loss " + std::to_string(row.loss) + ")",
                            std::move(report));
    }

    const auto batch = batch_sample(train_set, cfg.batch, batch_stream);
    row.batch_size = batch.size();
    // Per-sample momenta live only inside this block; after aggregation the
    // loop sees nothing but the privatized average.
    const PrivatizedAggregate aggregate = [&] {
      std::vector<ParamVector> clipped;
      clipped.reserve(batch.size());
      std::size_t n_clipped = 0;
      for (std::size_t i : batch) {
        ParamVector v = per_sample_momentum(obj, train_set[i], history, mcfg);
        if (would_clip(v, ccfg)) ++n_clipped;
        clipped.push_back(clip(std::move(v), ccfg));
      }
      row.clip_frac = batch.empty() ? 0.0 : static_cast<double>(n_clipped) / static_cast<double>(batch.size());
      return privatize_aggregate(clipped, obj.dim(), cfg.batch, sigma_dp, noise_stream);
    }();

    const auto out = filter.step(aggregate.value());
    row.update_norm = l2_norm(out.corrected);
    ParamVector next = x;
    axpy(-cfg.eta, out.corrected, next);
    if (options.record_trajectory) report.trajectory.push_back(next);
    history.push(std::move(next));
    report.rows.push_back(row);
  }

  const ParamVector& final_x = history.newest();
  report.final_loss = detail::loss_and_grad_norm(obj, train_set, final_x, cfg.metrics_samples).first;
  if (!std::isfinite(report.final_loss) || report.final_loss > kDivergenceLoss) {
    report.final_params = final_x;
    throw DivergenceError("train: diverged after the last step", std::move(report));
  }
  report.final_accuracy = evaluate_accuracy(obj, test_set, final_x);
  report.final_params = final_x;
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline TrainReport train(const RunConfig& cfg, const TrainOptions& options = {}) {
  const DataSplit data = materialize(cfg.dataset);
  return train(cfg, data.train, data.test, options);
}

}  // namespace dppmlf
