#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pdseg/nn.hpp"

namespace pdseg {

/// L pseudo-depth maps of one image, each 1×3×H×W with identical channels.
template <typename T>
struct PseudoDepthSet {
  std::vector<Tensor<T>> maps;
  std::vector<std::string> source_tags;

  std::size_t size() const { return maps.size(); }
  /// Throws DimensionError unless every map is 1×3×H×W with shared H, W.
  void validate() const;
};

struct PdamConfig {
  int num_maps = 1;
  int hidden = 0;  // MLP hidden width; 0 means 6L
  int mid = 0;     // spatial conv mid width; 0 means 3L
  double lambda_c = 0.5;
  double lambda_s = 0.5;

  int hidden_width() const { return hidden > 0 ? hidden : 6 * num_maps; }
  int mid_width() const { return mid > 0 ? mid : 3 * num_maps; }
};

/// Pseudo-depth aggregation: channel attention from pooled depthwise-conv
/// statistics, spatial attention from 1×1 convs over the stacked maps, and the
/// weighted sum  Σ_i (PD_i + λ_c·W_C^i⊗PD_i + λ_s·W_S^i⊗PD_i).
template <typename T>
class Pdam {
 public:
  Pdam(const PdamConfig& config, ParamStore<T>& store, const std::string& prefix, Init init, Rng& rng);

  const PdamConfig& config() const { return config_; }
  void set_lambdas(double lambda_c, double lambda_s);

  /// L weights of shape 1×3×1×1, each in (0, 1).
  std::vector<Tensor<T>> channel_attention(const PseudoDepthSet<T>& set) const;
  /// L weights of shape 1×1×H×W, each in (0, 1).
  std::vector<Tensor<T>> spatial_attention(const PseudoDepthSet<T>& set) const;
  /// Aggregated map, 1×3×H×W.
  Tensor<T> aggregate(const PseudoDepthSet<T>& set) const;

  /// Closed-form learnable scalar count.
  static std::int64_t param_count(const PdamConfig& config);

 private:
  void check_set(const PseudoDepthSet<T>& set) const;

  PdamConfig config_;
  std::vector<ConvLayer<T>> depthwise_;
  LinearLayer<T> fc1_, fc2_;
  ConvLayer<T> spatial1_, spatial2_;
};

extern template struct PseudoDepthSet<float>;
extern template struct PseudoDepthSet<double>;
extern template class Pdam<float>;
extern template class Pdam<double>;

}  // namespace pdseg
