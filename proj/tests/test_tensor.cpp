#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pdseg/ops.hpp"
#include "pdseg/tensor.hpp"

using namespace pdseg;
using T = Tensor<double>;

TEST(Tensor, FactoriesValidateShapeAndValues) {
  EXPECT_THROW(T::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(T::zeros({}), DimensionError);
  EXPECT_THROW(T::zeros({1, 2, 3, 4, 5}), DimensionError);
  EXPECT_THROW(T::zeros({2, 0}), DimensionError);
  EXPECT_THROW(T::from({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  const auto t = T::full({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(1), 3);
  EXPECT_DOUBLE_EQ(t.at(5), 1.5);
  EXPECT_EQ(to_string(t.shape()), "[2x3]");
}

TEST(Tensor, LeafGradientsAccumulateAcrossBackwardCalls) {
  auto x = T::from({2}, {1.0, -2.0}, true);
  auto loss = sum(mul(x, x));
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Tensor, IntermediateGradientsAreRecomputedPerCall) {
  auto x = T::from({3}, {1, 2, 3}, true);
  auto y = scale(x, 2.0);
  auto loss = sum(y);
  backward(loss);
  backward(loss);
  // y's grad is rebuilt from zero each time, so x sees exactly 2 × 2.
  EXPECT_DOUBLE_EQ(y.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Tensor, DiamondGraphSumsBothPaths) {
  auto x = T::from({1}, {3.0}, true);
  auto a = scale(x, 2.0);
  auto b = mul(x, x);
  backward(sum(add(a, b)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 + 6.0);
}

TEST(Tensor, BackwardNeedsScalar) {
  auto x = T::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), DimensionError);
}

TEST(Tensor, NoGraphWithoutRequiresGrad) {
  auto x = T::from({2}, {1, 2});
  auto y = scale(x, 3.0);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node_ptr()->is_leaf());
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
  auto x = T::from({2}, {1, 2}, true);
  x.mutable_data()[0] = 5;
  EXPECT_DOUBLE_EQ(x.at(0), 5);
  auto y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), Error);
}

TEST(Tensor, DetachAndCastDropHistory) {
  auto x = T::from({2}, {1.25, 2.5}, true);
  auto y = scale(x, 2.0).detach();
  EXPECT_FALSE(y.requires_grad());
  auto f = y.cast<float>();
  EXPECT_FLOAT_EQ(f.at(1), 5.0f);
}

TEST(Tensor, NonFiniteResultRaisesNumericError) {
  auto x = Tensor<float>::from({1}, {3e38f});
  EXPECT_THROW(scale(x, 10.0f), NumericError);
}
