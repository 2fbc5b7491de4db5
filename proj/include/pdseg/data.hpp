#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdseg/image.hpp"
#include "pdseg/nn.hpp"
#include "pdseg/pdam.hpp"

namespace pdseg {

struct SceneConfig {
  int image_size = 64;
  int num_classes = 6;
  int min_objects = 2;
  int max_objects = 5;
  double texture_noise = 0.08;
  /// Depth span of the ground plane from the top row (far) to the bottom row
  /// (near). 0 gives a fronto-parallel background at depth 1.
  double ground_tilt = 1.0;

  void validate() const;
};

enum class ShapeType { kRect, kDisc };

/// One foreground object. Rect: (cx, cy) center with half extents (rx, ry).
/// Disc: (cx, cy) center with radius rx.
struct SceneObject {
  int label = 1;
  ShapeType shape = ShapeType::kRect;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  double depth = 0.5;
};

/// Shape type and depth band of an object class (1..K-1). Classes alternate
/// rect/disc and step through depth bands, so color identifies only the shape
/// while the band has to come from depth.
ShapeType class_shape(int label);
int class_band(int label);
int band_count(int num_classes);
/// Nominal depth of a band center.
double band_depth(int band, int num_classes);

struct PerturbProfile {
  std::string name;
  int blur_radius = 0;
  double scale = 1.0;  // affine a, must be > 0
  double shift = 0.0;  // affine b
  double noise_sigma = 0.0;
  int quant_levels = 0;
  int erosion = 0;
  /// Amplitude of a smooth low-frequency value distortion (non-affine error).
  double warp = 0.0;
  /// Fraction of the image covered by zero-filled holes.
  double holes = 0.0;

  void validate() const;
};

/// sharp, smooth, quantized, sensor.
std::vector<PerturbProfile> default_profiles();
const PerturbProfile& find_profile(const std::vector<PerturbProfile>& profiles, const std::string& name);

struct SegSample {
  std::uint64_t seed = 0;
  Image rgb;                  // 3×H×W in [0,1]
  Image gt_depth;             // 1×H×W
  std::vector<Image> pseudo;  // L maps, 3×H×W, normalized to [0,1]
  std::vector<std::string> pseudo_tags;
  LabelMap labels;

  /// Maps named in `tags`, in that order.
  template <typename T>
  PseudoDepthSet<T> pseudo_depth_set(const std::vector<std::string>& tags) const;
  const Image& pseudo_map(const std::string& tag) const;
};

/// Paints objects far-to-near over the ground plane and renders RGB texture.
SegSample render_scene(const SceneConfig& config, const std::vector<SceneObject>& objects, std::uint64_t seed);
SegSample gen_scene(const SceneConfig& config, std::uint64_t seed,
                    const std::vector<PerturbProfile>& profiles = default_profiles());

struct PerturbResult {
  Image map;  // 3×H×W
  bool degenerate = false;
};

/// Corrupts ground-truth depth with a profile (affine, warp, erosion, blur,
/// noise, quantization, holes), min-max normalizes to [0,1] and replicates the
/// plane to three channels. A constant map normalizes to all-0.5 and is flagged.
PerturbResult perturb_depth(const Image& gt_depth, const PerturbProfile& profile, std::uint64_t seed);

struct ManifestEntry {
  std::string split;  // "train" or "test"
  std::uint64_t seed = 0;
  std::filesystem::path rgb, labels, gt_depth;
  std::vector<std::filesystem::path> pseudo;
};

struct Manifest {
  SceneConfig scene;
  std::vector<std::string> profiles;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& name) const;
};

/// Seed of sample `index` in `split` (0 = train, 1 = test).
std::uint64_t sample_seed(std::uint64_t base_seed, int split, int index);

/// Writes every sample plus `manifest.txt` into `out_dir`; returns the manifest.
Manifest build_dataset(const std::filesystem::path& out_dir, int n_train, int n_test, const SceneConfig& config,
                       const std::vector<PerturbProfile>& profiles, std::uint64_t base_seed);
Manifest read_manifest(const std::filesystem::path& path);
SegSample load_sample(const ManifestEntry& entry, const std::vector<std::string>& profiles);

/// Generates the same samples in memory without touching disk.
std::vector<SegSample> make_samples(int count, int split, const SceneConfig& config,
                                    const std::vector<PerturbProfile>& profiles, std::uint64_t base_seed);

struct AugmentConfig {
  double min_scale = 0.75;
  double max_scale = 1.25;
  double flip_probability = 0.5;
  double brightness = 0.1;
};

/// Random scale, crop/pad back to the original size, horizontal flip and RGB
/// brightness jitter. Padded pixels are labelled ignore.
SegSample augment(const SegSample& sample, const AugmentConfig& config, Rng& rng);

}  // namespace pdseg
