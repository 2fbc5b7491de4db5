#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "pdseg/ops.hpp"
#include "pdseg/param_store.hpp"

namespace pdseg {

using Rng = std::mt19937_64;

/// splitmix64 mix of a base seed with stream indices; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

enum class Init {
  kFanIn,  // weights ~ U(-k, k), k = 1/sqrt(fan_in); biases zero
  kZeros,
};

template <typename T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the layer has no bias
  Conv2dOptions options;

  static ConvLayer create(ParamStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t cout,
                          std::int64_t kernel, Conv2dOptions options, bool with_bias, Init init, Rng& rng);
  /// Scalars a layer of this geometry owns.
  static std::int64_t param_count(std::int64_t cin, std::int64_t cout, std::int64_t kernel, int groups,
                                  bool with_bias);

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }
};

template <typename T>
struct LinearLayer {
  Tensor<T> weight;
  Tensor<T> bias;

  static LinearLayer create(ParamStore<T>& store, const std::string& name, std::int64_t din, std::int64_t dout,
                            Init init, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

extern template struct ConvLayer<float>;
extern template struct ConvLayer<double>;
extern template struct LinearLayer<float>;
extern template struct LinearLayer<double>;

}  // namespace pdseg
