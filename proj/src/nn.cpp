#include "pdseg/nn.hpp"

#include <cmath>

namespace pdseg {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(base) ^ a) ^ b);
}

namespace {

template <typename T>
std::vector<T> init_values(std::int64_t count, std::int64_t fan_in, Init init, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(count), T(0));
  if (init == Init::kFanIn) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-k, k);
    for (auto& x : v) x = static_cast<T>(dist(rng));
  }
  return v;
}

}  // namespace

template <typename T>
ConvLayer<T> ConvLayer<T>::create(ParamStore<T>& store, const std::string& name, std::int64_t cin,
                                  std::int64_t cout, std::int64_t kernel, Conv2dOptions options, bool with_bias,
                                  Init init, Rng& rng) {
  if (cin % options.groups != 0 || cout % options.groups != 0) {
    throw ConfigError(name + ": groups must divide channel counts");
  }
  const std::int64_t cin_g = cin / options.groups;
  const std::int64_t fan_in = cin_g * kernel * kernel;
  ConvLayer layer;
  layer.options = options;
  layer.weight = store.add(name + ".weight", {cout, cin_g, kernel, kernel},
                           init_values<T>(cout * fan_in, fan_in, init, rng));
  if (with_bias) layer.bias = store.add(name + ".bias", {cout});
  return layer;
}

template <typename T>
std::int64_t ConvLayer<T>::param_count(std::int64_t cin, std::int64_t cout, std::int64_t kernel, int groups,
                                       bool with_bias) {
  return cout * (cin / groups) * kernel * kernel + (with_bias ? cout : 0);
}

template <typename T>
LinearLayer<T> LinearLayer<T>::create(ParamStore<T>& store, const std::string& name, std::int64_t din,
                                      std::int64_t dout, Init init, Rng& rng) {
  LinearLayer layer;
  layer.weight = store.add(name + ".weight", {dout, din}, init_values<T>(dout * din, din, init, rng));
  layer.bias = store.add(name + ".bias", {dout});
  return layer;
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct LinearLayer<float>;
template struct LinearLayer<double>;

}  // namespace pdseg
