#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdseg/data.hpp"
#include "pdseg/diffusion.hpp"
#include "pdseg/metrics.hpp"
#include "pdseg/pdam.hpp"

namespace pdseg {

enum class FusionMode { kRgbOnly, kStructured, kManual, kGaussian };

FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(FusionMode mode);

/// Where the pseudo-depth input comes from.
///   none            no depth branch
///   single:<tag>    one profile map
///   sum:<a,b,...>   element-wise addition of the maps
///   pdam:<a,b,...>  aggregation module over the maps
struct PdSource {
  enum class Kind { kNone, kSingle, kSum, kPdam };
  Kind kind = Kind::kNone;
  std::vector<std::string> profiles;

  static PdSource parse(const std::string& s);
  std::string str() const;
  bool uses_depth() const { return kind != Kind::kNone; }
};

struct SegNetConfig {
  int num_classes = 6;
  int stem_c1 = 16, stem_c2 = 32, latent = 4;
  int unet_c1 = 16, unet_c2 = 32;
  EncoderWidths encoder{};
  FusionMode fusion = FusionMode::kStructured;
  double w_rgb = 0.95, w_pd = 0.05;  // manual mode
  PdSource pd_source{PdSource::Kind::kPdam, {"sharp", "smooth", "quantized"}};
  double lambda_c = 0.5, lambda_s = 0.5;
  /// Diffusion timesteps. More than one runs the UNet once per step and
  /// concatenates every pass's decoder features before the head.
  std::vector<int> timesteps{0};

  void validate() const;
  /// key = value lines, parsed back by parse_segnet_config.
  std::string echo() const;
};

SegNetConfig parse_segnet_config(const std::string& text);

/// Stem (VAE stand-in) → fusion → toy UNet → 1×1 head over the decoder pyramid
/// plus the stem latent → bilinear upsample to input size.
template <typename T>
class SegNet {
 public:
  SegNet(const SegNetConfig& config, std::uint64_t seed, Init init = Init::kFanIn);

  const SegNetConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  /// 1×4×H/8×W/8; H and W must be divisible by 8.
  Tensor<T> stem(const Tensor<T>& rgb) const;
  /// The depth input fed to the encoder, per pd_source. Undefined for none.
  Tensor<T> depth_input(const PseudoDepthSet<T>* pd) const;
  /// Logits 1×K×H×W. `noise_seed` drives the gaussian mode only.
  Tensor<T> forward(const Tensor<T>& rgb, const PseudoDepthSet<T>* pd, std::uint64_t noise_seed = 0) const;
  /// Convenience wrapper pulling the configured maps from a sample.
  Tensor<T> forward(const SegSample& sample, std::uint64_t noise_seed = 0) const;

  /// True for parameters in the backbone learning-rate group.
  static bool is_backbone(const std::string& name);

 private:
  struct Block {
    ConvLayer<T> a, b;
  };
  Tensor<T> unet(const Tensor<T>& z, std::vector<Tensor<T>>& taps) const;
  Tensor<T> fuse(const Tensor<T>& z_rgb, const Tensor<T>& pd_latent, int t, std::uint64_t noise_seed) const;

  SegNetConfig config_;
  NoiseSchedule schedule_;
  ParamStore<T> store_;
  ConvLayer<T> stem1_, stem2_, stem3_;
  std::optional<PdEncoder<T>> encoder_;
  std::optional<Pdam<T>> pdam_;
  Block down1_, down2_, bottleneck_, up1_, up2_;
  ConvLayer<T> pool1_, pool2_;
  ConvLayer<T> head_;
};

struct LossWeights {
  double ce = 1.0;
  double dice = 1.0;
};

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double ce = 0;
  double dice = 0;
  bool all_ignored = false;  // loss defined as zero
};

template <typename T>
LossTerms<T> segmentation_loss(const Tensor<T>& logits, const LabelMap& labels, const LossWeights& weights = {});

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decoupled weight decay Adam with lazily zero-initialized moments.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Applies one update with lr_of(name) per parameter. Returns false, leaving
  /// every parameter untouched, when any gradient is non-finite.
  bool step(ParamStore<T>& store, const std::function<double(const std::string&)>& lr_of);

  int steps() const { return steps_; }
  int skipped() const { return skipped_; }

 private:
  void update(std::size_t index, Tensor<T>& param, double lr);

  AdamWConfig config_;
  int steps_ = 0;
  int skipped_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 2;
  double lr_backbone = 5e-6;
  double lr_rest = 1e-4;
  double weight_decay = 0.05;
  int lr_decay_step = 0;  // 0 disables decay
  double lr_decay_factor = 0.1;
  std::uint64_t seed = 0;
  bool augment = true;
  int eval_interval = 0;  // 0: evaluate only at the end
  LossWeights loss{};
  AdamWConfig adam{};

  void validate() const;
  std::string echo() const;
};

struct TraceRow {
  int iteration = 0;
  double ce = 0;
  double dice = 0;
  double val_miou = -1;  // -1 when no validation set was given
};

struct TrainResult {
  std::vector<TraceRow> trace;
  double first_ce = 0;  // mean CE over the first logging window
  double last_ce = 0;   // mean CE over the last logging window
  int iterations_run = 0;
  int skipped_steps = 0;
  int ignored_batches = 0;
  bool diverged = false;
  std::string divergence;
};

/// Runs the training loop in place on `model`. On divergence the parameters are
/// restored to the last finite step and the run stops.
template <typename T>
TrainResult train(SegNet<T>& model, const std::vector<SegSample>& train_set, const TrainConfig& config,
                  const std::vector<SegSample>* val_set = nullptr);

std::string trace_csv(const std::vector<TraceRow>& trace);

struct PredictOptions {
  bool multiscale = false;
  std::vector<double> scales{0.75, 1.0, 1.25};
  bool flip = true;
};

template <typename T>
LabelMap predict(const SegNet<T>& model, const SegSample& sample, const PredictOptions& options = {});

template <typename T>
ConfusionMatrix evaluate(const SegNet<T>& model, const std::vector<SegSample>& samples,
                         const PredictOptions& options = {});

/// Checkpoint header is "model." and "train." key = value lines.
template <typename T>
void save_model(const std::filesystem::path& path, const SegNet<T>& model, const TrainConfig& train_config);
template <typename T>
SegNet<T> load_model(const std::filesystem::path& path);

extern template class SegNet<float>;
extern template class SegNet<double>;
extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace pdseg
