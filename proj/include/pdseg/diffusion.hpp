#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pdseg/nn.hpp"

namespace pdseg {

enum class ScheduleKind { kLinear, kScaledLinear };

ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind kind);

/// DDPM-style variance schedule. Indices are 0-based: alpha_bars[t] = Π_{k<=t} alphas[k].
struct NoiseSchedule {
  int steps = 0;
  ScheduleKind kind = ScheduleKind::kScaledLinear;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  /// (sqrt(ᾱ_t), sqrt(1 − ᾱ_t)).
  std::pair<double, double> weights(int t) const;
  /// Plain-text audit table: t, beta, alpha_bar, sqrt(alpha_bar), sqrt(1 - alpha_bar).
  std::string dump() const;
};

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end, ScheduleKind kind);
/// scaled_linear, T=1000, beta 0.00085 → 0.012.
NoiseSchedule default_schedule();

struct EncoderWidths {
  int c1 = 16;
  int c2 = 32;
  int latent = 4;
};

/// Reported-scale widths used only for parameter accounting.
inline constexpr EncoderWidths kReportedScaleEncoder{128, 256, 4};

/// Three 3×3 stride-2 pad-1 convs (relu after the first two): 3×H×W → latent×H/8×W/8.
template <typename T>
class PdEncoder {
 public:
  PdEncoder(const EncoderWidths& widths, ParamStore<T>& store, const std::string& prefix, Init init, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& pd) const;
  const EncoderWidths& widths() const { return widths_; }
  static std::int64_t param_count(const EncoderWidths& widths);

 private:
  EncoderWidths widths_;
  ConvLayer<T> conv1_, conv2_, conv3_;
};

/// sqrt(ᾱ_t)·z_rgb + sqrt(1 − ᾱ_t)·noise.
template <typename T>
Tensor<T> fuse_gaussian(const Tensor<T>& z_rgb, const Tensor<T>& noise, const NoiseSchedule& schedule, int t);
/// Same weighting with the encoded pseudo depth standing in for the noise.
template <typename T>
Tensor<T> fuse_structured(const Tensor<T>& z_rgb, const Tensor<T>& pd_latent, const NoiseSchedule& schedule, int t);
/// w_rgb·z_rgb + w_pd·pd_latent with hand-picked weights.
template <typename T>
Tensor<T> fuse_manual(const Tensor<T>& z_rgb, const Tensor<T>& pd_latent, double w_rgb, double w_pd);

extern template class PdEncoder<float>;
extern template class PdEncoder<double>;

}  // namespace pdseg
