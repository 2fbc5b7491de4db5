#include <gtest/gtest.h>

#include "pdseg/grad_suite.hpp"

using namespace pdseg;
using D = Tensor<double>;

namespace {

// y = x² with a deliberately wrong backward (3x instead of 2x).
D bad_square(const D& x) {
  std::vector<double> v(x.data().begin(), x.data().end());
  for (auto& e : v) e *= e;
  return detail::make_result<double>("bad_square", x.shape(), std::move(v), {x}, [](D::Node& self) {
    auto& p = *self.parents[0];
    double* g = detail::grad_sink<double>(p);
    if (!g) return;
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[i] * 3.0 * p.value[i];
  });
}

}  // namespace

TEST(GradCheck, AcceptsCorrectGradient) {
  auto x = D::from({3}, {0.5, -1.0, 2.0}, true);
  const auto r = grad_check([](const std::vector<D>& in) { return sum(mul(in[0], in[0])); }, {x});
  EXPECT_TRUE(r.passed) << r.summary();
  EXPECT_LT(r.worst(), 1e-8);
}

TEST(GradCheck, FlagsWrongGradient) {
  auto x = D::from({3}, {0.5, -1.0, 2.0}, true);
  const auto r = grad_check([](const std::vector<D>& in) { return sum(bad_square(in[0])); }, {x});
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.worst(), 1.0 / 3.0, 1e-6);
}

TEST(GradCheck, DirectionalProbesAlsoFlagWrongGradient) {
  auto x = D::from({4}, {0.5, -1.0, 2.0, 1.5}, true);
  GradCheckOptions opt;
  opt.max_coords = 1;
  opt.directions = 3;
  const auto r = grad_check([](const std::vector<D>& in) { return sum(bad_square(in[0])); }, {x}, opt);
  EXPECT_FALSE(r.passed);
}

TEST(GradCheck, RejectsNonDeterministicFunction) {
  auto x = D::from({1}, {1.0}, true);
  int calls = 0;
  ScalarFn fn = [&](const std::vector<D>& in) { return scale(sum(in[0]), 1.0 + 1e-3 * ++calls); };
  EXPECT_THROW(grad_check(fn, {x}), OracleError);
}

TEST(GradCheck, RequiresLeafInputs) {
  auto x = D::from({1}, {1.0}, true);
  auto y = scale(x, 2.0);
  EXPECT_THROW(grad_check([](const std::vector<D>& in) { return sum(in[0]); }, {y}), ConfigError);
  EXPECT_THROW(grad_check([](const std::vector<D>& in) { return sum(in[0]); }, {D::from({1}, {1.0})}),
               ConfigError);
}

TEST(GradCheck, EndToEndPipelineSingleSeed) {
  const auto c = pdseg::gradsuite::pipeline_grad_case();
  auto [fn, inputs] = c.build(0);
  const auto r = grad_check(fn, inputs, c.options);
  EXPECT_TRUE(r.passed) << r.summary();
}
