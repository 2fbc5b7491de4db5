#include "pdseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "pdseg/image_io.hpp"
#include "pdseg/serialize.hpp"

namespace pdseg {

void SceneConfig::validate() const {
  if (image_size < 32 || image_size % 8 != 0) {
    throw ConfigError("image_size must be >= 32 and divisible by 8, got " + std::to_string(image_size));
  }
  if (num_classes < 2 || num_classes > 254) throw ConfigError("num_classes must be in [2, 254]");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("invalid object count range");
  if (texture_noise < 0) throw ConfigError("texture_noise must be >= 0");
  if (ground_tilt < 0 || ground_tilt > 1) throw ConfigError("ground_tilt must be in [0, 1]");
}

void PerturbProfile::validate() const {
  if (!(scale > 0)) throw ConfigError("profile '" + name + "': affine scale must be > 0");
  if (noise_sigma < 0 || warp < 0) throw ConfigError("profile '" + name + "': sigma and warp must be >= 0");
  if (blur_radius < 0 || erosion < 0 || quant_levels < 0) {
    throw ConfigError("profile '" + name + "': radii and levels must be >= 0");
  }
  if (quant_levels == 1) throw ConfigError("profile '" + name + "': quantization needs >= 2 levels");
  if (holes < 0 || holes >= 1) throw ConfigError("profile '" + name + "': hole fraction must be in [0, 1)");
}

std::vector<PerturbProfile> default_profiles() {
  // Three estimator-like profiles with distinct error characters, plus a
  // sensor-like profile with accurate values but speckle and holes.
  return {
      {.name = "sharp", .blur_radius = 1, .noise_sigma = 0.03, .warp = 0.10},
      {.name = "smooth", .blur_radius = 4, .warp = 0.10},
      {.name = "quantized", .blur_radius = 2, .quant_levels = 16, .warp = 0.10},
      {.name = "sensor", .noise_sigma = 0.02, .holes = 0.08},
  };
}

const PerturbProfile& find_profile(const std::vector<PerturbProfile>& profiles, const std::string& name) {
  for (const auto& p : profiles) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown depth profile '" + name + "'");
}

ShapeType class_shape(int label) { return (label - 1) % 2 == 0 ? ShapeType::kRect : ShapeType::kDisc; }
int class_band(int label) { return (label - 1) / 2; }
int band_count(int num_classes) { return num_classes / 2; }

double band_depth(int band, int num_classes) {
  const int nb = band_count(num_classes);
  if (nb <= 1) return 0.4;
  return 0.15 + band * (0.5 / (nb - 1));
}

template <typename T>
PseudoDepthSet<T> SegSample::pseudo_depth_set(const std::vector<std::string>& tags) const {
  PseudoDepthSet<T> set;
  for (const auto& tag : tags) {
    set.maps.push_back(to_tensor<T>(pseudo_map(tag)));
    set.source_tags.push_back(tag);
  }
  return set;
}

const Image& SegSample::pseudo_map(const std::string& tag) const {
  for (std::size_t i = 0; i < pseudo_tags.size(); ++i) {
    if (pseudo_tags[i] == tag) return pseudo[i];
  }
  throw ConfigError("sample has no pseudo-depth map '" + tag + "'");
}

template PseudoDepthSet<float> SegSample::pseudo_depth_set<float>(const std::vector<std::string>&) const;
template PseudoDepthSet<double> SegSample::pseudo_depth_set<double>(const std::vector<std::string>&) const;

namespace {

bool inside(const SceneObject& o, double x, double y) {
  if (o.shape == ShapeType::kRect) return std::abs(x - o.cx) <= o.rx && std::abs(y - o.cy) <= o.ry;
  const double dx = x - o.cx, dy = y - o.cy;
  return dx * dx + dy * dy <= o.rx * o.rx;
}

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackgroundColor{0.45, 0.45, 0.45};
constexpr Rgb kRectColor{0.80, 0.35, 0.20};
constexpr Rgb kDiscColor{0.20, 0.45, 0.80};

}  // namespace

SegSample render_scene(const SceneConfig& config, const std::vector<SceneObject>& objects, std::uint64_t seed) {
  config.validate();
  const int s = config.image_size;
  Rng rng(mix_seed(seed, 1));
  SegSample out;
  out.seed = seed;
  out.gt_depth = Image(1, s, s);
  out.labels = LabelMap(s, s, 0);
  for (int y = 0; y < s; ++y) {
    const float d = static_cast<float>(1.0 - config.ground_tilt * y / (s - 1));
    for (int x = 0; x < s; ++x) out.gt_depth.at(0, y, x) = d;
  }

  // Painter's algorithm: far objects first, nearer ones overwrite.
  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return objects[a].depth > objects[b].depth; });
  std::vector<int> owner(static_cast<std::size_t>(s) * s, -1);
  for (std::size_t idx : order) {
    const auto& o = objects[idx];
    if (o.label < 1 || o.label >= config.num_classes) throw ConfigError("object label outside 1..K-1");
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        if (!inside(o, x + 0.5, y + 0.5)) continue;
        out.labels.at(y, x) = static_cast<std::uint8_t>(o.label);
        out.gt_depth.at(0, y, x) = static_cast<float>(o.depth);
        owner[static_cast<std::size_t>(y) * s + x] = static_cast<int>(idx);
      }
    }
  }

  std::uniform_real_distribution<double> jitter(-0.08, 0.08);
  std::vector<Rgb> tint(objects.size());
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const Rgb base = objects[i].shape == ShapeType::kRect ? kRectColor : kDiscColor;
    tint[i] = {base.r + jitter(rng), base.g + jitter(rng), base.b + jitter(rng)};
  }
  std::normal_distribution<double> texture(0.0, config.texture_noise);
  out.rgb = Image(3, s, s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const int own = owner[static_cast<std::size_t>(y) * s + x];
      const Rgb c = own < 0 ? kBackgroundColor : tint[static_cast<std::size_t>(own)];
      const double ch[3] = {c.r, c.g, c.b};
      for (int k = 0; k < 3; ++k) {
        out.rgb.at(k, y, x) = static_cast<float>(std::clamp(ch[k] + texture(rng), 0.0, 1.0));
      }
    }
  }
  return out;
}

SegSample gen_scene(const SceneConfig& config, std::uint64_t seed, const std::vector<PerturbProfile>& profiles) {
  config.validate();
  Rng rng(mix_seed(seed, 0));
  const double s = config.image_size;
  const double margin = 3.0;
  std::uniform_int_distribution<int> count(config.min_objects, config.max_objects);
  std::uniform_int_distribution<int> label(1, config.num_classes - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int nb = band_count(config.num_classes);
  const double band_jitter = nb > 1 ? 0.25 * (0.5 / (nb - 1)) : 0.05;

  std::vector<SceneObject> objects;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.label = label(rng);
    o.shape = class_shape(o.label);
    if (o.shape == ShapeType::kRect) {
      o.rx = s / 12 + unit(rng) * (s / 5 - s / 12);
      o.ry = s / 12 + unit(rng) * (s / 5 - s / 12);
    } else {
      o.rx = o.ry = s / 10 + unit(rng) * (s / 5 - s / 10);
    }
    o.cx = o.rx * 0.5 + unit(rng) * (s - o.rx);
    const double lo = margin + o.ry, hi = s - margin - o.ry;
    o.cy = lo + unit(rng) * std::max(0.0, hi - lo);
    o.depth = band_depth(class_band(o.label), config.num_classes) + (2 * unit(rng) - 1) * band_jitter;
    objects.push_back(o);
  }
  SegSample out = render_scene(config, objects, seed);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    out.pseudo.push_back(perturb_depth(out.gt_depth, profiles[i], mix_seed(seed, 100 + i)).map);
    out.pseudo_tags.push_back(profiles[i].name);
  }
  return out;
}

namespace {

using Plane = std::vector<double>;

Plane box_blur(const Plane& in, int h, int w, int r) {
  Plane tmp(in.size()), out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int k = -r; k <= r; ++k) acc += in[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc / (2 * r + 1);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int k = -r; k <= r; ++k) acc += tmp[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc / (2 * r + 1);
    }
  }
  return out;
}

// Far values (larger depth) grow into nearer surfaces, shaving object borders.
Plane erode_near(const Plane& in, int h, int w, int r) {
  Plane out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = in[static_cast<std::size_t>(y) * w + x];
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
          m = std::max(m, in[static_cast<std::size_t>(yy) * w + xx]);
        }
      }
      out[static_cast<std::size_t>(y) * w + x] = m;
    }
  }
  return out;
}

std::pair<double, double> min_max(const Plane& p) {
  auto [lo, hi] = std::minmax_element(p.begin(), p.end());
  return {*lo, *hi};
}

}  // namespace

PerturbResult perturb_depth(const Image& gt_depth, const PerturbProfile& profile, std::uint64_t seed) {
  profile.validate();
  if (gt_depth.channels != 1) throw DimensionError("perturb_depth expects a single-channel depth map");
  const int h = gt_depth.height, w = gt_depth.width;
  Rng rng(seed);
  Plane v(gt_depth.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = profile.scale * gt_depth.data[i] + profile.shift;

  if (profile.warp > 0) {
    std::uniform_real_distribution<double> freq(-1.5, 1.5);
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    constexpr int kComponents = 3;
    double fx[kComponents], fy[kComponents], ph[kComponents];
    for (int k = 0; k < kComponents; ++k) {
      fx[k] = freq(rng);
      fy[k] = freq(rng);
      ph[k] = phase(rng);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double f = 0;
        for (int k = 0; k < kComponents; ++k) {
          f += std::cos(2 * std::numbers::pi * (fx[k] * x / w + fy[k] * y / h) + ph[k]);
        }
        v[static_cast<std::size_t>(y) * w + x] += profile.scale * profile.warp * f / kComponents;
      }
    }
  }
  if (profile.erosion > 0) v = erode_near(v, h, w, profile.erosion);
  if (profile.blur_radius > 0) v = box_blur(v, h, w, profile.blur_radius);
  if (profile.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, profile.noise_sigma * profile.scale);
    for (auto& x : v) x += noise(rng);
  }
  if (profile.quant_levels >= 2) {
    const auto [lo, hi] = min_max(v);
    if (hi > lo) {
      const double steps = profile.quant_levels - 1;
      for (auto& x : v) x = lo + std::round((x - lo) / (hi - lo) * steps) / steps * (hi - lo);
    }
  }

  PerturbResult out;
  out.map = Image(3, h, w);
  const auto [lo, hi] = min_max(v);
  Plane u(v.size(), 0.5);
  if (!(hi - lo > 1e-9 * std::max(1.0, std::abs(hi)))) {
    out.degenerate = true;
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) u[i] = (v[i] - lo) / (hi - lo);
    if (profile.holes > 0) {
      const double radius = std::max(2.0, w / 16.0);
      const double area = static_cast<double>(h) * w;
      const int n_holes = static_cast<int>(std::ceil(profile.holes * area / (std::numbers::pi * radius * radius)));
      std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h);
      for (int k = 0; k < n_holes; ++k) {
        const double cx = ux(rng), cy = uy(rng);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= radius * radius)
              u[static_cast<std::size_t>(y) * w + x] = 0.0;
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < u.size(); ++i) out.map.data[c * u.size() + i] = static_cast<float>(u[i]);
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t base_seed, int split, int index) {
  return mix_seed(base_seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(index));
}

std::vector<SegSample> make_samples(int count, int split, const SceneConfig& config,
                                    const std::vector<PerturbProfile>& profiles, std::uint64_t base_seed) {
  std::vector<SegSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(gen_scene(config, sample_seed(base_seed, split, i), profiles));
  return out;
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == name) out.push_back(e);
  }
  return out;
}

namespace {

std::string scene_line(const SceneConfig& c) {
  std::ostringstream os;
  os << "# scene image_size=" << c.image_size << " num_classes=" << c.num_classes
     << " min_objects=" << c.min_objects << " max_objects=" << c.max_objects << " texture_noise=" << c.texture_noise
     << " ground_tilt=" << c.ground_tilt;
  return os.str();
}

std::string profile_line(const PerturbProfile& p) {
  std::ostringstream os;
  os << "# profile " << p.name << " blur_radius=" << p.blur_radius << " scale=" << p.scale << " shift=" << p.shift
     << " noise_sigma=" << p.noise_sigma << " quant_levels=" << p.quant_levels << " erosion=" << p.erosion
     << " warp=" << p.warp << " holes=" << p.holes;
  return os.str();
}

}  // namespace

Manifest build_dataset(const std::filesystem::path& out_dir, int n_train, int n_test, const SceneConfig& config,
                       const std::vector<PerturbProfile>& profiles, std::uint64_t base_seed) {
  if (profiles.empty()) throw ConfigError("build_dataset needs at least one depth profile");
  if (n_train < 0 || n_test < 0) throw ConfigError("sample counts must be >= 0");
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Manifest manifest;
  manifest.scene = config;
  for (const auto& p : profiles) manifest.profiles.push_back(p.name);
  std::set<std::uint64_t> seen;
  for (int split = 0; split < 2; ++split) {
    const std::string name = split == 0 ? "train" : "test";
    const int n = split == 0 ? n_train : n_test;
    for (int i = 0; i < n; ++i) {
      const std::uint64_t seed = sample_seed(base_seed, split, i);
      if (!seen.insert(seed).second) throw ConfigError("sample seed collision between splits");
      const SegSample s = gen_scene(config, seed, profiles);
      char stem[64];
      std::snprintf(stem, sizeof(stem), "%s_%03d", name.c_str(), i);
      ManifestEntry e;
      e.split = name;
      e.seed = seed;
      e.rgb = std::string(stem) + "_rgb.dftn";
      e.labels = std::string(stem) + "_labels.pgm";
      e.gt_depth = std::string(stem) + "_depth.pfm";
      save_tensor(out_dir / e.rgb, to_tensor<float>(s.rgb));
      write_label_pgm(out_dir / e.labels, s.labels);
      write_pfm(out_dir / e.gt_depth, s.gt_depth);
      for (std::size_t k = 0; k < profiles.size(); ++k) {
        e.pseudo.push_back(std::string(stem) + "_pd_" + profiles[k].name + ".pfm");
        Image plane(1, s.pseudo[k].height, s.pseudo[k].width);
        std::copy_n(s.pseudo[k].data.begin(), plane.data.size(), plane.data.begin());
        write_pfm(out_dir / e.pseudo.back(), plane);
      }
      manifest.entries.push_back(std::move(e));
    }
  }

  std::ofstream os(out_dir / "manifest.txt");
  if (!os) throw IoError("cannot write manifest in " + out_dir.string());
  os << "# pdseg manifest v1\n" << scene_line(config) << "\n";
  for (const auto& p : profiles) os << profile_line(p) << "\n";
  os << "# profiles";
  for (const auto& p : profiles) os << ' ' << p.name;
  os << "\n";
  for (const auto& e : manifest.entries) {
    os << e.split << ' ' << e.seed << ' ' << e.rgb.string() << ' ' << e.labels.string() << ' '
       << e.gt_depth.string();
    for (const auto& p : e.pseudo) os << ' ' << p.string();
    os << "\n";
  }
  if (!os) throw IoError("manifest write failed");
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  const auto dir = path.parent_path();
  Manifest m;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(is, line)) {
    const std::size_t line_at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "profiles") {
        std::string name;
        while (ls >> name) m.profiles.push_back(name);
      } else if (key == "scene") {
        std::string kv;
        while (ls >> kv) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) continue;
          const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
          if (k == "image_size") m.scene.image_size = std::stoi(v);
          else if (k == "num_classes") m.scene.num_classes = std::stoi(v);
          else if (k == "min_objects") m.scene.min_objects = std::stoi(v);
          else if (k == "max_objects") m.scene.max_objects = std::stoi(v);
          else if (k == "texture_noise") m.scene.texture_noise = std::stod(v);
          else if (k == "ground_tilt") m.scene.ground_tilt = std::stod(v);
        }
      }
      continue;
    }
    ManifestEntry e;
    std::string rgb, labels, depth;
    if (!(ls >> e.split >> e.seed >> rgb >> labels >> depth)) throw ParseError("malformed manifest line", line_at);
    e.rgb = dir / rgb;
    e.labels = dir / labels;
    e.gt_depth = dir / depth;
    std::string pd;
    while (ls >> pd) e.pseudo.push_back(dir / pd);
    if (e.pseudo.size() != m.profiles.size()) {
      throw ParseError("manifest line lists " + std::to_string(e.pseudo.size()) + " pseudo maps, expected " +
                           std::to_string(m.profiles.size()),
                       line_at);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

SegSample load_sample(const ManifestEntry& entry, const std::vector<std::string>& profiles) {
  SegSample s;
  s.seed = entry.seed;
  s.rgb = to_image(load_tensor<float>(entry.rgb));
  s.labels = read_label_pgm(entry.labels);
  s.gt_depth = read_pfm(entry.gt_depth);
  for (std::size_t k = 0; k < entry.pseudo.size(); ++k) {
    const Image plane = read_pfm(entry.pseudo[k]);
    Image map(3, plane.height, plane.width);
    for (int c = 0; c < 3; ++c) std::copy(plane.data.begin(), plane.data.end(), map.data.begin() + c * plane.plane_size());
    s.pseudo.push_back(std::move(map));
    s.pseudo_tags.push_back(k < profiles.size() ? profiles[k] : "pd" + std::to_string(k));
  }
  return s;
}

namespace {

Image place(const Image& src, int size, int off_y, int off_x, float fill) {
  // Copies the window [off, off+size) of src; out-of-range pixels get `fill`.
  Image out(src.channels, size, size, fill);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const int sy = y + off_y, sx = x + off_x;
        if (sy >= 0 && sy < src.height && sx >= 0 && sx < src.width) out.at(c, y, x) = src.at(c, sy, sx);
      }
  return out;
}

LabelMap place(const LabelMap& src, int size, int off_y, int off_x) {
  LabelMap out(size, size, kIgnoreLabel);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int sy = y + off_y, sx = x + off_x;
      if (sy >= 0 && sy < src.height && sx >= 0 && sx < src.width) out.at(y, x) = src.at(sy, sx);
    }
  return out;
}

}  // namespace

SegSample augment(const SegSample& sample, const AugmentConfig& config, Rng& rng) {
  const int size = sample.rgb.height;
  std::uniform_real_distribution<double> scale(config.min_scale, config.max_scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> bright(-config.brightness, config.brightness);
  const int n = std::max(8, static_cast<int>(std::lround(size * scale(rng))));
  // Crop window offset when enlarged; negative offset centers the padding when shrunk.
  int off_y = 0, off_x = 0;
  if (n >= size) {
    std::uniform_int_distribution<int> off(0, n - size);
    off_y = off(rng);
    off_x = off(rng);
  } else {
    std::uniform_int_distribution<int> off(-(size - n), 0);
    off_y = off(rng);
    off_x = off(rng);
  }
  const bool flip = unit(rng) < config.flip_probability;
  const float delta = static_cast<float>(bright(rng));

  SegSample out;
  out.seed = sample.seed;
  out.pseudo_tags = sample.pseudo_tags;
  auto transform = [&](const Image& img, float fill) {
    Image r = place(resize_bilinear(img, n, n), size, off_y, off_x, fill);
    return flip ? flip_horizontal(r) : r;
  };
  out.rgb = transform(sample.rgb, 0.0f);
  for (auto& v : out.rgb.data) v = std::clamp(v + delta, 0.0f, 1.0f);
  out.gt_depth = transform(sample.gt_depth, 0.0f);
  for (const auto& pd : sample.pseudo) out.pseudo.push_back(transform(pd, 0.0f));
  LabelMap lab = place(resize_nearest(sample.labels, n, n), size, off_y, off_x);
  out.labels = flip ? flip_horizontal(lab) : lab;
  return out;
}

}  // namespace pdseg
