#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dppmlf/filter.hpp"
#include "oracles.hpp"

using namespace dppmlf;

namespace {

const FilterConfig kMnist{{-0.9}, {0.1}};
const FilterConfig kCifar{{-0.9}, {0.15, -0.05}};

}  // namespace

TEST(Validate, AcceptsTableConfigs) {
  EXPECT_NO_THROW(validate(kMnist));
  EXPECT_NO_THROW(validate(kCifar));
  EXPECT_NO_THROW(validate(FilterConfig::identity()));
  for (const FilterConfig& f : {FilterConfig{{-0.6}, {0.4}}, FilterConfig{{-0.6}, {0.2, 0.2}},
                                FilterConfig{{-0.6}, {0.5, -0.1}}, FilterConfig{{-0.9}, {0.05, 0.05}},
                                FilterConfig{{-0.7, -0.2}, {0.05, 0.05}}}) {
    EXPECT_NO_THROW(validate(f));
  }
}

TEST(Validate, RejectsGainViolation) {
  try {
    validate(FilterConfig{{-0.9}, {0.2}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("1.1"), std::string::npos);
  }
}

TEST(Validate, RejectsUnstableAndDegenerate) {
  EXPECT_THROW(validate(FilterConfig{{-1.0}, {0.0}}), ConfigError);    // pole at 1
  EXPECT_THROW(validate(FilterConfig{{-1.5}, {-0.5}}), ConfigError);   // pole at 1.5
  EXPECT_THROW(validate(FilterConfig{{}, {}}), ConfigError);
  EXPECT_THROW(validate(FilterConfig{{NAN}, {1.0}}), ConfigError);
}

TEST(FilterStep, IdentityPassesThrough) {
  FilterState<double> st;
  for (double v : {1.0, -2.0, 3.5, 0.0}) EXPECT_EQ(filter_step(st, FilterConfig::identity(), v), v);
}

TEST(FilterStep, ConstantInput) {
  FilterState<double> st;
  for (int t = 0; t < 50; ++t) {
    EXPECT_NEAR(filter_step(st, kMnist, 3.0), (1 - std::pow(0.9, t + 1)) * 3.0, 1e-12);
  }
}

TEST(FilterStep, UnitImpulse) {
  FilterState<double> st;
  const double expected[] = {0.1, 0.09, 0.081, 0.0729};
  for (int t = 0; t < 4; ++t) EXPECT_NEAR(filter_step(st, kMnist, t == 0 ? 1.0 : 0.0), expected[t], 1e-15);
}

TEST(FilterStep, VectorShapesMustMatch) {
  FilterState<ParamVector> st;
  filter_step(st, kMnist, ParamVector{1.0, 2.0});
  EXPECT_THROW(filter_step(st, kMnist, ParamVector{1.0}), DimensionError);
}

TEST(BiasCorrection, Identity) {
  FilterState<double> st;
  for (int t = 0; t < 10; ++t) EXPECT_EQ(bias_correction_step(st, FilterConfig::identity()), 1.0);
}

TEST(BiasCorrection, FirstOrderClosedForm) {
  FilterState<double> st;
  EXPECT_NEAR(bias_correction_step(st, kMnist), 0.1, 1e-15);
  EXPECT_NEAR(bias_correction_step(st, kMnist), 0.19, 1e-15);
  for (int t = 2; t <= 100; ++t) EXPECT_NEAR(bias_correction_step(st, kMnist), 1 - std::pow(0.9, t + 1), 1e-12);
}

TEST(BiasCorrection, SecondFeedforward) {
  FilterState<double> st;
  EXPECT_NEAR(bias_correction_step(st, kCifar), 0.15, 1e-15);
  EXPECT_NEAR(bias_correction_step(st, kCifar), 0.235, 1e-15);
}

TEST(CorrectedOutput, Cases) {
  EXPECT_EQ(corrected_output(ParamVector{1.0, 2.0}, 1.0), (ParamVector{1.0, 2.0}));
  EXPECT_THROW(corrected_output(ParamVector{1.0}, 0.0), NumericError);
  EXPECT_THROW(corrected_output(ParamVector{1.0}, -0.3), NumericError);
  LowPassFilter f(kMnist);
  f.step(ParamVector{1.0});
  const auto out = f.step(ParamVector{0.0});
  EXPECT_NEAR(out.corrected[0], 0.09 / 0.19, 1e-15);
}

TEST(CorrectedOutput, ConstantInputIsRecovered) {
  RandomStream rs(11);
  std::vector<FilterConfig> configs{kMnist, kCifar, FilterConfig::identity(), FilterConfig{{-0.7, -0.2}, {0.05, 0.05}}};
  for (int i = 0; i < 50; ++i) configs.push_back(oracle::random_stable_filter(rs));
  for (const auto& cfg : configs) {
    LowPassFilter f(cfg);
    const ParamVector c{0.7, -1.3};
    for (int t = 0; t < 200; ++t) {
      const auto out = f.step(c);
      ASSERT_NEAR(out.corrected[0], 0.7, 1e-12);
      ASSERT_NEAR(out.corrected[1], -1.3, 1e-12);
    }
  }
}

TEST(ImpulseResponse, AnalyticGeometric) {
  const auto ir = impulse_response_analytic(kMnist, 40);
  for (std::size_t r = 0; r <= 40; ++r) EXPECT_NEAR(ir.kappa(r), 0.1 * std::pow(0.9, r), 1e-14);
}

TEST(ImpulseResponse, AnalyticIdentity) {
  const auto ir = impulse_response_analytic(FilterConfig::identity(), 5);
  EXPECT_EQ(ir.kappa(0), 1.0);
  for (std::size_t r = 1; r <= 5; ++r) EXPECT_EQ(ir.kappa(r), 0.0);
}

TEST(ImpulseResponse, AnalyticSecondFeedforward) {
  const auto ir = impulse_response_analytic(kCifar, 10);
  EXPECT_NEAR(ir.kappa(0), 0.15, 1e-14);
  EXPECT_NEAR(ir.kappa(1), 0.085, 1e-14);
  EXPECT_NEAR(ir.kappa(2), 0.0765, 1e-14);
  const auto rec = impulse_response_recursive(kCifar, 10);
  for (std::size_t r = 0; r <= 10; ++r) EXPECT_NEAR(ir.kappa(r), rec.kappa(r), 1e-14);
}

TEST(ImpulseResponse, RecursiveGeometric) {
  const auto ir = impulse_response_recursive(FilterConfig{{-0.6}, {0.4}}, 30);
  for (std::size_t r = 0; r <= 30; ++r) EXPECT_NEAR(ir.kappa(r), 0.4 * std::pow(0.6, r), 1e-15);
  const auto id = impulse_response_recursive(FilterConfig::identity(), 3);
  EXPECT_EQ(id.kappa(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(ImpulseResponse, PrefixSumIsBiasCorrection) {
  RandomStream rs(12);
  for (int i = 0; i < 30; ++i) {
    const auto cfg = oracle::random_stable_filter(rs);
    const auto ir = impulse_response_recursive(cfg, 100);
    FilterState<double> st;
    for (std::size_t t = 0; t <= 100; ++t) ASSERT_NEAR(ir.prefix_sum(t), bias_correction_step(st, cfg), 1e-9);
  }
}

TEST(ImpulseResponse, RepeatedPolesFallBack) {
  // (z - 0.5)^2 = z^2 - z + 0.25: gain -(-1 + 0.25) + b = 1 => b = 0.25
  const FilterConfig cfg{{-1.0, 0.25}, {0.25}};
  EXPECT_NO_THROW(validate(cfg));
  EXPECT_THROW(impulse_response_analytic(cfg, 10), FallbackNeeded);
  const auto ir = impulse_response(cfg, 10);
  const auto rec = impulse_response_recursive(cfg, 10);
  EXPECT_EQ(ir.kappa(), rec.kappa());
  // (r + 1) 0.5^r scaled by b_0
  for (std::size_t r = 0; r <= 10; ++r) EXPECT_NEAR(ir.kappa(r), 0.25 * (r + 1) * std::pow(0.5, r), 1e-14);
}

TEST(ImpulseResponse, NormalizedWeights) {
  const auto ir = impulse_response(kMnist, 20);
  for (std::size_t t = 0; t <= 20; ++t) {
    double s = 0.0;
    for (double v : ir.normalized(t)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
  EXPECT_THROW(ir.kappa_hat(3, 2), UsageError);
}

TEST(ImpulseResponse, ConvolutionIdentityAndGainBound) {
  RandomStream rs(13);
  for (int i = 0; i < 50; ++i) {
    const auto cfg = oracle::random_stable_filter(rs);
    const auto ir = impulse_response(cfg, 600);
    std::vector<double> input(300);
    for (auto& v : input) v = 2 * rs.next_uniform() - 1;
    const auto conv = oracle::convolve(ir.kappa(), input);
    FilterState<double> st;
    for (std::size_t t = 0; t < input.size(); ++t) ASSERT_NEAR(filter_step(st, cfg, input[t]), conv[t], 1e-9);
    // sum of kappa approaches the DC gain of 1
    EXPECT_NEAR(ir.prefix_sum(600), 1.0, 1e-9);
  }
}
