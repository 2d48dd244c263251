#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dppmlf/momentum.hpp"

using namespace dppmlf;

TEST(MomentumWeights, HandValues) {
  const auto w = momentum_weights({0.1, 2}, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NEAR(w[0], 1.0 / 1.1, 1e-15);
  EXPECT_NEAR(w[1], 0.1 / 1.1, 1e-15);
  EXPECT_EQ(momentum_weights({0.3, 1}, 1), std::vector<double>{1.0});
  EXPECT_EQ(momentum_weights({1.0, 4}, 4), (std::vector<double>{0.25, 0.25, 0.25, 0.25}));
}

TEST(MomentumWeights, WarmupRenormalizes) {
  EXPECT_EQ(momentum_weights({0.5, 3}, 1), std::vector<double>{1.0});
  const auto w = momentum_weights({0.5, 3}, 2);
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(momentum_weights({0.5, 3}, 10).size(), 3u);
  EXPECT_THROW(momentum_weights({0.5, 3}, 0), UsageError);
}

TEST(MomentumConfig, Validation) {
  EXPECT_THROW((MomentumConfig{0.0, 2}.validate()), DomainError);
  EXPECT_THROW((MomentumConfig{1.5, 2}.validate()), DomainError);
  EXPECT_THROW((MomentumConfig{0.5, 0}.validate()), DomainError);
  EXPECT_NO_THROW((MomentumConfig{1.0, 1}.validate()));
}

TEST(ParamHistory, KeepsLastK) {
  ParamHistory h(2);
  h.push(ParamVector{1.0});
  h.push(ParamVector{2.0});
  h.push(ParamVector{3.0});
  EXPECT_EQ(h.size(), 2u);
  EXPECT_EQ(h.t(), 2u);
  EXPECT_EQ(h.at_lag(0)[0], 3.0);
  EXPECT_EQ(h.at_lag(1)[0], 2.0);
  EXPECT_THROW(h.at_lag(2), UsageError);
  EXPECT_THROW(h.push(ParamVector{1.0, 2.0}), DimensionError);
}

namespace {

const Objective kLinear(ObjectiveKind::kLinearRegression, 2, 0);
const Sample kXi{{1.0, -1.0}, 0.5};

}  // namespace

TEST(PerSampleMomentum, SingleLagIsGradient) {
  ParamHistory h(1);
  h.push(ParamVector{0.3, 0.1});
  h.push(ParamVector{0.7, -0.2});
  EXPECT_EQ(per_sample_momentum(kLinear, kXi, h, {0.4, 1}), kLinear.gradient(ParamVector{0.7, -0.2}, kXi));
}

TEST(PerSampleMomentum, FrozenParameters) {
  ParamHistory h(4);
  for (int i = 0; i < 4; ++i) h.push(ParamVector{0.25, 0.5});
  const auto g = kLinear.gradient(ParamVector{0.25, 0.5}, kXi);
  const auto v = per_sample_momentum(kLinear, kXi, h, {0.9, 4});
  EXPECT_NEAR(v[0], g[0], 1e-15);
  EXPECT_NEAR(v[1], g[1], 1e-15);
}

TEST(PerSampleMomentum, TwoSnapshotsWeightedSum) {
  ParamHistory h(2);
  const ParamVector older{1.0, 0.0}, newer{0.0, 2.0};
  h.push(older);
  h.push(newer);
  const auto g_new = kLinear.gradient(newer, kXi), g_old = kLinear.gradient(older, kXi);
  const auto v = per_sample_momentum(kLinear, kXi, h, {0.5, 2});
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(v[i], (2.0 / 3.0) * g_new[i] + (1.0 / 3.0) * g_old[i], 1e-15);
}

TEST(Clip, Cases) {
  const auto c = clip(ParamVector{3.0, 4.0}, {1.0});
  EXPECT_NEAR(c[0], 0.6, 1e-15);
  EXPECT_NEAR(c[1], 0.8, 1e-15);
  const ParamVector small{0.1234567, -0.3};
  EXPECT_EQ(clip(small, {1.0}), small);
  EXPECT_EQ(clip(ParamVector(3), {1.0}), ParamVector(3));
  EXPECT_THROW(clip(small, {0.0}), DomainError);
  EXPECT_TRUE(would_clip(ParamVector{3.0, 4.0}, {1.0}));
  EXPECT_FALSE(would_clip(small, {1.0}));
}

TEST(Rho, HandValuesAndLimits) {
  EXPECT_NEAR(std::pow(variance_reduction_rho({0.5, 2}), 2), 1.8, 1e-14);
  for (double beta : {0.01, 0.1, 0.5, 0.9, 1.0}) EXPECT_NEAR(variance_reduction_rho({beta, 1}), 1.0, 1e-14);
  EXPECT_EQ(variance_reduction_rho({1.0, 4}), 2.0);
  for (std::size_t k : {2u, 3u, 6u}) {
    EXPECT_NEAR(std::pow(variance_reduction_rho({1.0 - 1e-9, k}), 2), static_cast<double>(k), 1e-6);
  }
}

TEST(Rho, MatchesWeightSquares) {
  for (double beta : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0}) {
    for (std::size_t k = 1; k <= 8; ++k) {
      double s = 0.0;
      for (double w : momentum_weights({beta, k}, k)) s += w * w;
      EXPECT_NEAR(s, 1.0 / std::pow(variance_reduction_rho({beta, k}), 2), 1e-12);
    }
  }
}

TEST(Rho, MonteCarloVariance) {
  // frozen mean, i.i.d. unit-variance noise per snapshot
  RandomStream rs(21);
  const Objective obj(ObjectiveKind::kLinearRegression, 1, 0);
  const Sample xi{{1.0}, 0.0};  // gradient at x is x itself
  const MomentumConfig cfg{0.5, 3};
  const int trials = 20000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < trials; ++i) {
    ParamHistory h(cfg.k);
    for (std::size_t j = 0; j < cfg.k; ++j) h.push(gaussian_vector(rs, 1, 1.0));
    const double v = per_sample_momentum(obj, xi, h, cfg)[0];
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / trials;
  const double var = (sum_sq - trials * mean * mean) / (trials - 1);
  EXPECT_NEAR(var, 1.0 / std::pow(variance_reduction_rho(cfg), 2), 0.05 / std::pow(variance_reduction_rho(cfg), 2));
}
