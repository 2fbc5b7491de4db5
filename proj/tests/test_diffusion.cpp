#include <gtest/gtest.h>

#include <cmath>

#include "pdseg/grad_suite.hpp"

using namespace pdseg;

TEST(Schedule, DefaultMatchesIndependentRecomputation) {
  const auto s = default_schedule();
  ASSERT_EQ(s.steps, 1000);
  const double r0 = std::sqrt(0.00085), r1 = std::sqrt(0.012);
  double log_bar = 0;
  for (int t = 0; t < s.steps; ++t) {
    const double r = r0 + (r1 - r0) * t / 999.0;
    const double beta = r * r;
    log_bar += std::log1p(-beta);
    EXPECT_NEAR(s.betas[t], beta, 1e-15);
    EXPECT_NEAR(s.alpha_bars[t], std::exp(log_bar), 1e-10 * std::exp(log_bar));
  }
  EXPECT_NEAR(s.alpha_bars[0], 0.99915, 1e-12);
}

TEST(Schedule, LinearKind) {
  const auto s = build_schedule(10, 1e-4, 2e-2, ScheduleKind::kLinear);
  EXPECT_NEAR(s.betas[0], 1e-4, 1e-15);
  EXPECT_NEAR(s.betas[9], 2e-2, 1e-15);
  EXPECT_NEAR(s.betas[3], 1e-4 + 3 * (2e-2 - 1e-4) / 9, 1e-15);
}

TEST(Schedule, MonotoneAndProductConsistent) {
  for (auto kind : {ScheduleKind::kLinear, ScheduleKind::kScaledLinear}) {
    const auto s = build_schedule(1000, 0.00085, 0.012, kind);
    double prod = 1;
    for (int t = 0; t < s.steps; ++t) {
      prod *= s.alphas[t];
      EXPECT_NEAR(s.alpha_bars[t], prod, 1e-10 * prod);
      if (t > 0) {
        EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
      }
      EXPECT_DOUBLE_EQ(s.alphas[t], 1 - s.betas[t]);
    }
  }
}

TEST(Schedule, ModalityRatioAtStepZero) {
  const auto [ws, wn] = default_schedule().weights(0);
  EXPECT_NEAR(ws, 0.999575, 1e-6);
  EXPECT_NEAR(wn, 0.029155, 1e-6);
  EXPECT_GE(wn / ws, 0.025);
  EXPECT_LE(wn / ws, 0.035);
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(build_schedule(0, 1e-4, 2e-2, ScheduleKind::kLinear), ConfigError);
  EXPECT_THROW(build_schedule(10, 2e-2, 1e-4, ScheduleKind::kLinear), ConfigError);
  EXPECT_THROW(build_schedule(10, 0, 1e-2, ScheduleKind::kLinear), ConfigError);
  EXPECT_THROW(default_schedule().weights(1000), ConfigError);
  EXPECT_THROW(default_schedule().weights(-1), ConfigError);
  EXPECT_THROW(parse_schedule_kind("cosine"), ConfigError);
  EXPECT_EQ(parse_schedule_kind(to_string(ScheduleKind::kLinear)), ScheduleKind::kLinear);
}

TEST(Schedule, DumpHasOneRowPerStep) {
  const auto text = build_schedule(5, 1e-3, 2e-2, ScheduleKind::kScaledLinear).dump();
  int rows = 0;
  for (char c : text) rows += c == '\n';
  EXPECT_GE(rows, 5);
  EXPECT_NE(text.find("\n4 "), std::string::npos);
}

TEST(Encoder, ShapesAndDivisibility) {
  ParamStore<float> store;
  Rng rng(0);
  PdEncoder<float> enc(EncoderWidths{}, store, "enc", Init::kFanIn, rng);
  EXPECT_EQ(enc(Tensor<float>::zeros({1, 3, 64, 64})).shape(), (Shape{1, 4, 8, 8}));
  EXPECT_THROW(enc(Tensor<float>::zeros({1, 3, 60, 64})), DimensionError);
  EXPECT_THROW(enc(Tensor<float>::zeros({1, 1, 64, 64})), DimensionError);
}

TEST(Encoder, ParameterAccounting) {
  // Σ cin·cout·9 + cout over the three convs.
  auto closed = [](EncoderWidths w) {
    return 3 * w.c1 * 9 + w.c1 + w.c1 * w.c2 * 9 + w.c2 + w.c2 * w.latent * 9 + w.latent;
  };
  for (auto w : {EncoderWidths{}, kReportedScaleEncoder, EncoderWidths{8, 8, 4}}) {
    ParamStore<float> store;
    Rng rng(0);
    PdEncoder<float> enc(w, store, "enc", Init::kFanIn, rng);
    EXPECT_EQ(store.scalar_count(), closed(w));
    EXPECT_EQ(PdEncoder<float>::param_count(w), closed(w));
  }
  EXPECT_EQ(PdEncoder<float>::param_count(kReportedScaleEncoder), 307972);
  EXPECT_EQ(PdEncoder<float>::param_count(EncoderWidths{}), 6244);
}

TEST(Fusion, WeightingAndErrors) {
  const auto sched = default_schedule();
  const auto z = Tensor<double>::full({1, 4, 2, 2}, 2.0);
  const auto pd = Tensor<double>::full({1, 4, 2, 2}, -1.0);
  const auto [ws, wn] = sched.weights(200);
  EXPECT_NEAR(fuse_structured(z, pd, sched, 200).at(0), 2 * ws - wn, 1e-15);
  EXPECT_NEAR(fuse_gaussian(z, pd, sched, 200).at(3), 2 * ws - wn, 1e-15);
  EXPECT_NEAR(fuse_manual(z, pd, 0.8, 0.2).at(1), 1.6 - 0.2, 1e-15);
  EXPECT_THROW(fuse_manual(z, pd, -0.1, 1.0), ConfigError);
  EXPECT_THROW(fuse_structured(z, Tensor<double>::zeros({1, 4, 2, 3}), sched, 0), DimensionError);
  // Zero pseudo-depth latent leaves only the sqrt(ᾱ_t) scaled RGB latent.
  const auto zero = Tensor<double>::zeros({1, 4, 2, 2});
  EXPECT_EQ(fuse_structured(z, zero, sched, 0).at(0), 2.0 * sched.weights(0).first);
}
