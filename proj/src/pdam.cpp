#include "pdseg/pdam.hpp"

namespace pdseg {

template <typename T>
void PseudoDepthSet<T>::validate() const {
  if (maps.empty()) throw DimensionError("pseudo-depth set is empty");
  const Shape& ref = maps.front().shape();
  for (const auto& m : maps) {
    const Shape& s = m.shape();
    if (s.size() != 4 || s[0] != 1 || s[1] != 3 || s[2] != ref[2] || s[3] != ref[3]) {
      throw DimensionError("pseudo-depth map " + to_string(s) + " is not 1x3x" + std::to_string(ref[2]) + "x" +
                           std::to_string(ref[3]));
    }
  }
  if (!source_tags.empty() && source_tags.size() != maps.size()) {
    throw ConfigError("pseudo-depth set has " + std::to_string(maps.size()) + " maps but " +
                      std::to_string(source_tags.size()) + " source tags");
  }
}

template <typename T>
Pdam<T>::Pdam(const PdamConfig& config, ParamStore<T>& store, const std::string& prefix, Init init, Rng& rng)
    : config_(config) {
  const int l = config.num_maps;
  if (l < 1) throw ConfigError("PDAM needs at least one pseudo-depth map");
  set_lambdas(config.lambda_c, config.lambda_s);
  for (int i = 0; i < l; ++i) {
    depthwise_.push_back(ConvLayer<T>::create(store, prefix + ".dw" + std::to_string(i), 3, 3, 5,
                                              {.stride = 1, .padding = 2, .groups = 3}, false, init, rng));
  }
  fc1_ = LinearLayer<T>::create(store, prefix + ".mlp.fc1", 6 * l, config.hidden_width(), init, rng);
  fc2_ = LinearLayer<T>::create(store, prefix + ".mlp.fc2", config.hidden_width(), 3 * l, init, rng);
  spatial1_ = ConvLayer<T>::create(store, prefix + ".spatial.conv1", 3 * l, config.mid_width(), 1, {}, true, init, rng);
  spatial2_ = ConvLayer<T>::create(store, prefix + ".spatial.conv2", config.mid_width(), l, 1, {}, true, init, rng);
}

template <typename T>
void Pdam<T>::set_lambdas(double lambda_c, double lambda_s) {
  if (lambda_c < 0 || lambda_s < 0) throw ConfigError("PDAM lambdas must be non-negative");
  config_.lambda_c = lambda_c;
  config_.lambda_s = lambda_s;
}

template <typename T>
void Pdam<T>::check_set(const PseudoDepthSet<T>& set) const {
  set.validate();
  if (static_cast<int>(set.size()) != config_.num_maps) {
    throw ConfigError("PDAM configured for " + std::to_string(config_.num_maps) + " maps, got " +
                      std::to_string(set.size()));
  }
}

template <typename T>
std::vector<Tensor<T>> Pdam<T>::channel_attention(const PseudoDepthSet<T>& set) const {
  check_set(set);
  const auto l = static_cast<std::int64_t>(set.size());
  std::vector<Tensor<T>> pooled;
  for (std::size_t i = 0; i < set.size(); ++i) {
    // The depthwise conv only feeds pooling; the raw map is what gets reweighted.
    auto filtered = depthwise_[i](set.maps[i]);
    pooled.push_back(global_pool(filtered, PoolMode::kMax));
    pooled.push_back(global_pool(filtered, PoolMode::kAvg));
  }
  auto y = reshape(concat(pooled, 1), {1, 6 * l});
  auto w = sigmoid(fc2_(relu(fc1_(y))));
  return split(reshape(w, {1, 3 * l, 1, 1}), std::vector<std::int64_t>(static_cast<std::size_t>(l), 3), 1);
}

template <typename T>
std::vector<Tensor<T>> Pdam<T>::spatial_attention(const PseudoDepthSet<T>& set) const {
  check_set(set);
  auto stacked = concat(set.maps, 1);
  auto w = sigmoid(spatial2_(relu(spatial1_(stacked))));
  return split(w, std::vector<std::int64_t>(set.size(), 1), 1);
}

namespace {

template <typename F>
auto named_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("PDAM ") + stage + ": " + e.what());
  }
}

}  // namespace

template <typename T>
Tensor<T> Pdam<T>::aggregate(const PseudoDepthSet<T>& set) const {
  const auto wc = named_stage("channel attention", [&] { return channel_attention(set); });
  const auto ws = named_stage("spatial attention", [&] { return spatial_attention(set); });
  const T lc = static_cast<T>(config_.lambda_c);
  const T ls = static_cast<T>(config_.lambda_s);
  return named_stage("weighted sum", [&] {
    Tensor<T> total;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& pd = set.maps[i];
      auto term = add(add(pd, scale(mul(pd, wc[i]), lc)), scale(mul(pd, ws[i]), ls));
      total = total.defined() ? add(total, term) : term;
    }
    return total;
  });
}

template <typename T>
std::int64_t Pdam<T>::param_count(const PdamConfig& c) {
  const std::int64_t l = c.num_maps;
  const std::int64_t hidden = c.hidden_width(), mid = c.mid_width();
  const std::int64_t dw = l * ConvLayer<T>::param_count(3, 3, 5, 3, false);
  const std::int64_t mlp = (6 * l * hidden + hidden) + (hidden * 3 * l + 3 * l);
  const std::int64_t spatial = ConvLayer<T>::param_count(3 * l, mid, 1, 1, true) +
                               ConvLayer<T>::param_count(mid, l, 1, 1, true);
  return dw + mlp + spatial;
}

template struct PseudoDepthSet<float>;
template struct PseudoDepthSet<double>;
template class Pdam<float>;
template class Pdam<double>;

}  // namespace pdseg
