#include "pdseg/diffusion.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace pdseg {

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "scaled_linear") return ScheduleKind::kScaledLinear;
  throw ConfigError("unknown schedule kind '" + s + "'");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "scaled_linear";
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end, ScheduleKind kind) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0 && beta_start < beta_end && beta_end < 1)) {
    throw ConfigError("schedule requires 0 < beta_start < beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.kind = kind;
  s.betas.resize(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    if (kind == ScheduleKind::kLinear) {
      s.betas[t] = beta_start + frac * (beta_end - beta_start);
    } else {
      const double r = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
      s.betas[t] = r * r;
    }
  }
  double running = 1.0;
  for (double b : s.betas) {
    s.alphas.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bars.push_back(running);
  }
  return s;
}

NoiseSchedule default_schedule() { return build_schedule(1000, 0.00085, 0.012, ScheduleKind::kScaledLinear); }

std::pair<double, double> NoiseSchedule::weights(int t) const {
  if (t < 0 || t >= steps) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps) + ")");
  }
  const double ab = alpha_bars[static_cast<std::size_t>(t)];
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

std::string NoiseSchedule::dump() const {
  std::ostringstream os;
  os << "# t beta alpha_bar sqrt_alpha_bar sqrt_one_minus_alpha_bar\n";
  char line[160];
  for (int t = 0; t < steps; ++t) {
    const auto [ws, wn] = weights(t);
    std::snprintf(line, sizeof(line), "%d %.12e %.12e %.12e %.12e\n", t, betas[t], alpha_bars[t], ws, wn);
    os << line;
  }
  return os.str();
}

template <typename T>
PdEncoder<T>::PdEncoder(const EncoderWidths& widths, ParamStore<T>& store, const std::string& prefix, Init init,
                        Rng& rng)
    : widths_(widths) {
  const Conv2dOptions down{.stride = 2, .padding = 1, .groups = 1};
  conv1_ = ConvLayer<T>::create(store, prefix + ".conv1", 3, widths.c1, 3, down, true, init, rng);
  conv2_ = ConvLayer<T>::create(store, prefix + ".conv2", widths.c1, widths.c2, 3, down, true, init, rng);
  conv3_ = ConvLayer<T>::create(store, prefix + ".conv3", widths.c2, widths.latent, 3, down, true, init, rng);
}

template <typename T>
Tensor<T> PdEncoder<T>::operator()(const Tensor<T>& pd) const {
  if (pd.rank() != 4 || pd.dim(1) != 3) throw DimensionError("pseudo-depth encoder expects N×3×H×W input");
  if (pd.dim(2) % 8 != 0 || pd.dim(3) % 8 != 0) {
    throw DimensionError("pseudo-depth encoder needs H, W divisible by 8, got " + to_string(pd.shape()));
  }
  return conv3_(relu(conv2_(relu(conv1_(pd)))));
}

template <typename T>
std::int64_t PdEncoder<T>::param_count(const EncoderWidths& w) {
  return ConvLayer<T>::param_count(3, w.c1, 3, 1, true) + ConvLayer<T>::param_count(w.c1, w.c2, 3, 1, true) +
         ConvLayer<T>::param_count(w.c2, w.latent, 3, 1, true);
}

namespace {

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw DimensionError(std::string(op) + ": " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

template <typename T>
Tensor<T> fuse_gaussian(const Tensor<T>& z_rgb, const Tensor<T>& noise, const NoiseSchedule& schedule, int t) {
  require_same("fuse_gaussian", z_rgb.shape(), noise.shape());
  const auto [ws, wn] = schedule.weights(t);
  return add(scale(z_rgb, static_cast<T>(ws)), scale(noise, static_cast<T>(wn)));
}

template <typename T>
Tensor<T> fuse_structured(const Tensor<T>& z_rgb, const Tensor<T>& pd_latent, const NoiseSchedule& schedule,
                          int t) {
  require_same("fuse_structured", z_rgb.shape(), pd_latent.shape());
  return fuse_gaussian(z_rgb, pd_latent, schedule, t);
}

template <typename T>
Tensor<T> fuse_manual(const Tensor<T>& z_rgb, const Tensor<T>& pd_latent, double w_rgb, double w_pd) {
  require_same("fuse_manual", z_rgb.shape(), pd_latent.shape());
  if (w_rgb < 0 || w_pd < 0) throw ConfigError("fuse_manual: modality weights must be non-negative");
  return add(scale(z_rgb, static_cast<T>(w_rgb)), scale(pd_latent, static_cast<T>(w_pd)));
}

template class PdEncoder<float>;
template class PdEncoder<double>;
#define PDSEG_INSTANTIATE_FUSE(T)                                                                      \
  template Tensor<T> fuse_gaussian(const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&, int);     \
  template Tensor<T> fuse_structured(const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&, int);   \
  template Tensor<T> fuse_manual(const Tensor<T>&, const Tensor<T>&, double, double);
PDSEG_INSTANTIATE_FUSE(float)
PDSEG_INSTANTIATE_FUSE(double)

}  // namespace pdseg
