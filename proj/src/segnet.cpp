#include "pdseg/segnet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pdseg/serialize.hpp"

namespace pdseg {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("bad value '" + v + "' for " + key);
  }
  return out;
}

}  // namespace

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "rgb_only") return FusionMode::kRgbOnly;
  if (s == "structured") return FusionMode::kStructured;
  if (s == "manual") return FusionMode::kManual;
  if (s == "gaussian") return FusionMode::kGaussian;
  throw ConfigError("unknown fusion mode '" + s + "' (rgb_only, structured, manual, gaussian)");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kRgbOnly: return "rgb_only";
    case FusionMode::kStructured: return "structured";
    case FusionMode::kManual: return "manual";
    case FusionMode::kGaussian: return "gaussian";
  }
  return "?";
}

PdSource PdSource::parse(const std::string& s) {
  PdSource out;
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  if (colon != std::string::npos) out.profiles = split_list(s.substr(colon + 1), ',');
  if (kind == "none") {
    out.kind = Kind::kNone;
    if (!out.profiles.empty()) throw ConfigError("pd source 'none' takes no profiles");
    return out;
  }
  if (kind == "single") {
    out.kind = Kind::kSingle;
    if (out.profiles.size() != 1) throw ConfigError("pd source 'single' needs exactly one profile");
    return out;
  }
  if (kind == "sum" || kind == "pdam") {
    out.kind = kind == "sum" ? Kind::kSum : Kind::kPdam;
    if (out.profiles.empty()) out.profiles = {"sharp", "smooth", "quantized"};
    return out;
  }
  throw ConfigError("unknown pd source '" + s + "' (none, single:<p>, sum:<p,...>, pdam:<p,...>)");
}

std::string PdSource::str() const {
  std::string head;
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kSingle: head = "single"; break;
    case Kind::kSum: head = "sum"; break;
    case Kind::kPdam: head = "pdam"; break;
  }
  std::string list;
  for (const auto& p : profiles) list += (list.empty() ? "" : ",") + p;
  return head + ":" + list;
}

void SegNetConfig::validate() const {
  if (num_classes < 2 || num_classes > 254) throw ConfigError("num_classes must be in [2, 254]");
  for (int w : {stem_c1, stem_c2, latent, unet_c1, unet_c2, encoder.c1, encoder.c2, encoder.latent}) {
    if (w < 1) throw ConfigError("layer widths must be >= 1");
  }
  if (encoder.latent != latent) throw ConfigError("pseudo-depth encoder latent width must equal the stem's");
  const bool wants_depth = fusion == FusionMode::kStructured || fusion == FusionMode::kManual;
  if (wants_depth && !pd_source.uses_depth()) {
    throw ConfigError("fusion mode " + to_string(fusion) + " needs a pseudo-depth source");
  }
  if (!wants_depth && pd_source.uses_depth()) {
    throw ConfigError("fusion mode " + to_string(fusion) + " takes no pseudo-depth source");
  }
  if (w_rgb < 0 || w_pd < 0) throw ConfigError("modality weights must be non-negative");
  if (lambda_c < 0 || lambda_s < 0) throw ConfigError("PDAM lambdas must be non-negative");
  if (timesteps.empty()) throw ConfigError("at least one timestep is required");
}

std::string SegNetConfig::echo() const {
  std::ostringstream os;
  std::string ts;
  for (int t : timesteps) ts += (ts.empty() ? "" : ",") + std::to_string(t);
  os << "model.num_classes = " << num_classes << "\n"
     << "model.stem = " << stem_c1 << "," << stem_c2 << "," << latent << "\n"
     << "model.unet = " << unet_c1 << "," << unet_c2 << "\n"
     << "model.encoder = " << encoder.c1 << "," << encoder.c2 << "," << encoder.latent << "\n"
     << "model.fusion = " << to_string(fusion) << "\n"
     << "model.w_rgb = " << fmt(w_rgb) << "\n"
     << "model.w_pd = " << fmt(w_pd) << "\n"
     << "model.pd_source = " << pd_source.str() << "\n"
     << "model.lambda_c = " << fmt(lambda_c) << "\n"
     << "model.lambda_s = " << fmt(lambda_s) << "\n"
     << "model.timesteps = " << ts << "\n";
  return os.str();
}

SegNetConfig parse_segnet_config(const std::string& text) {
  SegNetConfig c;
  std::istringstream is(text);
  std::string line;
  auto ints = [](const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& part : split_list(v, ',')) out.push_back(parse_number<int>(key, part));
    return out;
  };
  while (std::getline(is, line)) {
    if (line.rfind("model.", 0) != 0) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
    const std::string key = trim(line.substr(6, eq - 6));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "num_classes") {
      c.num_classes = parse_number<int>(key, v);
    } else if (key == "stem") {
      auto w = ints(key, v);
      if (w.size() != 3) throw ConfigError("model.stem needs three widths");
      c.stem_c1 = w[0], c.stem_c2 = w[1], c.latent = w[2];
    } else if (key == "unet") {
      auto w = ints(key, v);
      if (w.size() != 2) throw ConfigError("model.unet needs two widths");
      c.unet_c1 = w[0], c.unet_c2 = w[1];
    } else if (key == "encoder") {
      auto w = ints(key, v);
      if (w.size() != 3) throw ConfigError("model.encoder needs three widths");
      c.encoder = {w[0], w[1], w[2]};
    } else if (key == "fusion") {
      c.fusion = parse_fusion_mode(v);
    } else if (key == "w_rgb") {
      c.w_rgb = parse_number<double>(key, v);
    } else if (key == "w_pd") {
      c.w_pd = parse_number<double>(key, v);
    } else if (key == "pd_source") {
      c.pd_source = PdSource::parse(v);
    } else if (key == "lambda_c") {
      c.lambda_c = parse_number<double>(key, v);
    } else if (key == "lambda_s") {
      c.lambda_s = parse_number<double>(key, v);
    } else if (key == "timesteps") {
      c.timesteps = ints(key, v);
    } else {
      throw ConfigError("unknown model key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
SegNet<T>::SegNet(const SegNetConfig& config, std::uint64_t seed, Init init)
    : config_(config), schedule_(default_schedule()) {
  config_.validate();
  for (int t : config_.timesteps) (void)schedule_.weights(t);  // range check

  Rng rng(mix_seed(seed, 0x5e9));
  const Conv2dOptions same{.stride = 1, .padding = 1, .groups = 1};
  const Conv2dOptions down{.stride = 2, .padding = 1, .groups = 1};
  const auto& c = config_;
  auto conv = [&](const std::string& name, int cin, int cout, Conv2dOptions o) {
    return ConvLayer<T>::create(store_, name, cin, cout, 3, o, true, init, rng);
  };

  stem1_ = conv("stem.conv1", 3, c.stem_c1, down);
  stem2_ = conv("stem.conv2", c.stem_c1, c.stem_c2, down);
  stem3_ = conv("stem.conv3", c.stem_c2, c.latent, down);
  if (c.pd_source.uses_depth()) encoder_.emplace(c.encoder, store_, "pd_encoder", init, rng);
  if (c.pd_source.kind == PdSource::Kind::kPdam) {
    PdamConfig pc;
    pc.num_maps = static_cast<int>(c.pd_source.profiles.size());
    pc.lambda_c = c.lambda_c;
    pc.lambda_s = c.lambda_s;
    pdam_.emplace(pc, store_, "pdam", init, rng);
  }

  down1_ = {conv("unet.down1.a", c.latent, c.unet_c1, same), conv("unet.down1.b", c.unet_c1, c.unet_c1, same)};
  pool1_ = conv("unet.down1.pool", c.unet_c1, c.unet_c1, down);
  down2_ = {conv("unet.down2.a", c.unet_c1, c.unet_c2, same), conv("unet.down2.b", c.unet_c2, c.unet_c2, same)};
  pool2_ = conv("unet.down2.pool", c.unet_c2, c.unet_c2, down);
  bottleneck_ = {conv("unet.mid.a", c.unet_c2, c.unet_c2, same), conv("unet.mid.b", c.unet_c2, c.unet_c2, same)};
  up1_ = {conv("unet.up1.a", 2 * c.unet_c2, c.unet_c2, same), conv("unet.up1.b", c.unet_c2, c.unet_c2, same)};
  up2_ = {conv("unet.up2.a", c.unet_c2 + c.unet_c1, c.unet_c1, same),
          conv("unet.up2.b", c.unet_c1, c.unet_c1, same)};

  const int taps = static_cast<int>(c.timesteps.size()) * (c.unet_c1 + c.unet_c2) + c.latent;
  head_ = ConvLayer<T>::create(store_, "head.conv", taps, c.num_classes, 1, {}, true, init, rng);
}

template <typename T>
bool SegNet<T>::is_backbone(const std::string& name) {
  return name.rfind("unet.", 0) == 0;
}

template <typename T>
Tensor<T> SegNet<T>::stem(const Tensor<T>& rgb) const {
  if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3) {
    throw DimensionError("stem expects a 1×3×H×W image, got " + to_string(rgb.shape()));
  }
  if (rgb.dim(2) % 8 != 0 || rgb.dim(3) % 8 != 0) {
    throw DimensionError("stem needs H, W divisible by 8, got " + to_string(rgb.shape()));
  }
  return stem3_(relu(stem2_(relu(stem1_(rgb)))));
}

template <typename T>
Tensor<T> SegNet<T>::depth_input(const PseudoDepthSet<T>* pd) const {
  const auto& src = config_.pd_source;
  if (!src.uses_depth()) return {};
  if (pd == nullptr || pd->size() == 0) {
    throw ConfigError("pd source " + src.str() + " needs pseudo-depth maps");
  }
  pd->validate();
  if (pd->size() != src.profiles.size()) {
    throw ConfigError("pd source " + src.str() + " expects " + std::to_string(src.profiles.size()) +
                      " maps, got " + std::to_string(pd->size()));
  }
  switch (src.kind) {
    case PdSource::Kind::kSingle: return pd->maps[0];
    case PdSource::Kind::kSum: {
      Tensor<T> total = pd->maps[0];
      for (std::size_t i = 1; i < pd->size(); ++i) total = add(total, pd->maps[i]);
      return total;
    }
    case PdSource::Kind::kPdam: return pdam_->aggregate(*pd);
    case PdSource::Kind::kNone: break;
  }
  return {};
}

template <typename T>
Tensor<T> SegNet<T>::unet(const Tensor<T>& z, std::vector<Tensor<T>>& taps) const {
  auto block = [](const Block& b, const Tensor<T>& x) { return relu(b.b(relu(b.a(x)))); };
  const auto skip1 = block(down1_, z);
  const auto skip2 = block(down2_, relu(pool1_(skip1)));
  const auto mid = block(bottleneck_, relu(pool2_(skip2)));
  // Nearest resize to the skip's extents is exactly ×2 when extents are even.
  const auto u1 = resize_nearest(mid, skip2.dim(2), skip2.dim(3));
  const auto dec1 = block(up1_, concat<T>({u1, skip2}, 1));
  const auto u2 = resize_nearest(dec1, skip1.dim(2), skip1.dim(3));
  const auto dec2 = block(up2_, concat<T>({u2, skip1}, 1));
  taps.push_back(resize_bilinear(dec1, z.dim(2), z.dim(3)));
  taps.push_back(dec2);
  return dec2;
}

template <typename T>
Tensor<T> SegNet<T>::fuse(const Tensor<T>& z_rgb, const Tensor<T>& pd_latent, int t,
                          std::uint64_t noise_seed) const {
  switch (config_.fusion) {
    case FusionMode::kRgbOnly: return scale(z_rgb, static_cast<T>(schedule_.weights(t).first));
    case FusionMode::kStructured: return fuse_structured(z_rgb, pd_latent, schedule_, t);
    case FusionMode::kManual: return fuse_manual(z_rgb, pd_latent, config_.w_rgb, config_.w_pd);
    case FusionMode::kGaussian: {
      Rng rng(mix_seed(noise_seed, static_cast<std::uint64_t>(t), 0x9a55));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<T> eps(static_cast<std::size_t>(z_rgb.numel()));
      for (auto& e : eps) e = static_cast<T>(normal(rng));
      return fuse_gaussian(z_rgb, Tensor<T>::from(z_rgb.shape(), std::move(eps)), schedule_, t);
    }
  }
  throw ConfigError("unhandled fusion mode");
}

template <typename T>
Tensor<T> SegNet<T>::forward(const Tensor<T>& rgb, const PseudoDepthSet<T>* pd, std::uint64_t noise_seed) const {
  const auto z_rgb = stem(rgb);
  Tensor<T> pd_latent;
  if (config_.pd_source.uses_depth()) {
    const auto d = depth_input(pd);
    if (d.dim(2) != rgb.dim(2) || d.dim(3) != rgb.dim(3)) {
      throw DimensionError("pseudo depth " + to_string(d.shape()) + " does not match image " +
                           to_string(rgb.shape()));
    }
    pd_latent = (*encoder_)(d);
  }
  std::vector<Tensor<T>> taps;
  for (int t : config_.timesteps) unet(fuse(z_rgb, pd_latent, t, noise_seed), taps);
  taps.push_back(z_rgb);
  const auto logits = head_(concat(taps, 1));
  return resize_bilinear(logits, rgb.dim(2), rgb.dim(3));
}

template <typename T>
Tensor<T> SegNet<T>::forward(const SegSample& sample, std::uint64_t noise_seed) const {
  const auto rgb = to_tensor<T>(sample.rgb);
  if (!config_.pd_source.uses_depth()) return forward(rgb, nullptr, noise_seed);
  const auto set = sample.pseudo_depth_set<T>(config_.pd_source.profiles);
  return forward(rgb, &set, noise_seed);
}

// ---------------------------------------------------------------------------

template <typename T>
LossTerms<T> segmentation_loss(const Tensor<T>& logits, const LabelMap& labels, const LossWeights& weights) {
  if (logits.rank() != 4 || logits.dim(2) != labels.height || logits.dim(3) != labels.width) {
    throw DimensionError("loss: logits " + to_string(logits.shape()) + " vs labels " +
                         std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  LossTerms<T> out;
  out.all_ignored = std::all_of(labels.labels.begin(), labels.labels.end(),
                                [](std::uint8_t v) { return v == kIgnoreLabel; });
  const auto ce = cross_entropy(logits, std::span<const std::uint8_t>(labels.labels));
  const auto dice = soft_dice(logits, std::span<const std::uint8_t>(labels.labels));
  out.ce = static_cast<double>(ce.item());
  out.dice = static_cast<double>(dice.item());
  out.total = add(scale(ce, static_cast<T>(weights.ce)), scale(dice, static_cast<T>(weights.dice)));
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
bool AdamW<T>::step(ParamStore<T>& store, const std::function<double(const std::string&)>& lr_of) {
  auto& entries = store.entries();
  for (const auto& e : entries) {
    for (T g : e.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        ++skipped_;
        return false;
      }
    }
  }
  if (m_.size() < entries.size()) {
    m_.resize(entries.size());
    v_.resize(entries.size());
  }
  ++steps_;
  for (std::size_t i = 0; i < entries.size(); ++i) update(i, entries[i].tensor, lr_of(entries[i].name));
  return true;
}

template <typename T>
void AdamW<T>::update(std::size_t index, Tensor<T>& param, double lr) {
  auto p = param.mutable_data();
  const auto g = param.grad();
  auto& m = m_[index];
  auto& v = v_[index];
  if (m.empty()) {
    m.assign(p.size(), T(0));
    v.assign(p.size(), T(0));
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, steps_);
  const double c2 = 1.0 - std::pow(b2, steps_);
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
    const double mj = b1 * m[j] + (1.0 - b1) * gj;
    const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
    m[j] = static_cast<T>(mj);
    v[j] = static_cast<T>(vj);
    const double upd = (mj / c1) / (std::sqrt(vj / c2) + config_.eps);
    p[j] = static_cast<T>(static_cast<double>(p[j]) * decay - lr * upd);
  }
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_backbone > 0) || !(lr_rest > 0)) throw ConfigError("learning rates must be > 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (lr_decay_step < 0) throw ConfigError("lr_decay_step must be >= 0");
  if (!(lr_decay_factor > 0)) throw ConfigError("lr_decay_factor must be > 0");
  if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
}

std::string TrainConfig::echo() const {
  std::ostringstream os;
  os << "train.iterations = " << iterations << "\n"
     << "train.batch_size = " << batch_size << "\n"
     << "train.lr_backbone = " << fmt(lr_backbone) << "\n"
     << "train.lr_rest = " << fmt(lr_rest) << "\n"
     << "train.weight_decay = " << fmt(weight_decay) << "\n"
     << "train.lr_decay_step = " << lr_decay_step << "\n"
     << "train.lr_decay_factor = " << fmt(lr_decay_factor) << "\n"
     << "train.seed = " << seed << "\n"
     << "train.augment = " << (augment ? 1 : 0) << "\n"
     << "train.eval_interval = " << eval_interval << "\n"
     << "train.loss = " << fmt(loss.ce) << "," << fmt(loss.dice) << "\n";
  return os.str();
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "iteration,ce,dice,val_miou\n";
  for (const auto& r : trace) {
    os << r.iteration << "," << fmt(r.ce) << "," << fmt(r.dice) << ",";
    if (r.val_miou >= 0) os << fmt(r.val_miou);
    os << "\n";
  }
  return os.str();
}

template <typename T>
TrainResult train(SegNet<T>& model, const std::vector<SegSample>& train_set, const TrainConfig& config,
                  const std::vector<SegSample>* val_set) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  auto& store = model.params();
  Rng rng(mix_seed(config.seed, 0x77a1));
  AdamWConfig ac = config.adam;
  ac.weight_decay = config.weight_decay;
  AdamW<T> opt(ac);
  const AugmentConfig aug{};

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::vector<std::vector<T>> last_good;
  auto snapshot = [&] {
    last_good.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto d = store.entries()[i].tensor.data();
      last_good[i].assign(d.begin(), d.end());
    }
  };
  snapshot();

  TrainResult result;
  const int window = std::min(20, config.iterations);
  const int log_every = config.eval_interval > 0 ? config.eval_interval : config.iterations;
  double first_sum = 0, last_sum = 0, win_ce = 0, win_dice = 0;
  int first_n = 0, last_n = 0, win_n = 0;

  for (int it = 0; it < config.iterations; ++it) {
    const double decay = (config.lr_decay_step > 0 && it >= config.lr_decay_step) ? config.lr_decay_factor : 1.0;
    store.zero_grad();
    double ce = 0, dice = 0;
    int used = 0;
    try {
      for (int b = 0; b < config.batch_size; ++b) {
        const SegSample& base = train_set[next_index()];
        const SegSample sample = config.augment ? augment(base, aug, rng) : base;
        const std::uint64_t noise_seed = rng();
        const auto logits = model.forward(sample, noise_seed);
        auto terms = segmentation_loss(logits, sample.labels, config.loss);
        if (terms.all_ignored) {
          ++result.ignored_batches;
          continue;
        }
        backward(scale(terms.total, static_cast<T>(1.0 / config.batch_size)));
        ce += terms.ce;
        dice += terms.dice;
        ++used;
      }
    } catch (const NumericError& e) {
      for (std::size_t i = 0; i < store.size(); ++i) {
        auto d = store.entries()[i].tensor.mutable_data();
        std::copy(last_good[i].begin(), last_good[i].end(), d.begin());
      }
      result.diverged = true;
      result.divergence = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
    if (used > 0) {
      if (opt.step(store, [&](const std::string& name) {
            return decay * (SegNet<T>::is_backbone(name) ? config.lr_backbone : config.lr_rest);
          })) {
        snapshot();
      }
      ce /= used;
      dice /= used;
      if (it < window) first_sum += ce, ++first_n;
      if (it >= config.iterations - window) last_sum += ce, ++last_n;
      win_ce += ce;
      win_dice += dice;
      ++win_n;
    }
    result.iterations_run = it + 1;
    if ((it + 1) % log_every == 0 || it + 1 == config.iterations) {
      TraceRow row;
      row.iteration = it + 1;
      row.ce = win_n > 0 ? win_ce / win_n : 0.0;
      row.dice = win_n > 0 ? win_dice / win_n : 0.0;
      if (val_set != nullptr && !val_set->empty()) row.val_miou = evaluate(model, *val_set).scores().mean_iou;
      result.trace.push_back(row);
      win_ce = win_dice = 0;
      win_n = 0;
    }
  }
  result.first_ce = first_n > 0 ? first_sum / first_n : 0.0;
  result.last_ce = last_n > 0 ? last_sum / last_n : 0.0;
  result.skipped_steps = opt.skipped();
  return result;
}

// ---------------------------------------------------------------------------

namespace {

SegSample resized(const SegSample& s, int h, int w, bool flip) {
  SegSample out;
  out.seed = s.seed;
  out.pseudo_tags = s.pseudo_tags;
  auto tf = [&](const Image& img) {
    Image r = (img.height == h && img.width == w) ? img : resize_bilinear(img, h, w);
    return flip ? flip_horizontal(r) : r;
  };
  out.rgb = tf(s.rgb);
  for (const auto& pd : s.pseudo) out.pseudo.push_back(tf(pd));
  return out;
}

LabelMap argmax_labels(const std::vector<double>& probs, int k, int h, int w) {
  LabelMap out(h, w);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < hw; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (probs[c * hw + i] > probs[best * hw + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace

template <typename T>
LabelMap predict(const SegNet<T>& model, const SegSample& sample, const PredictOptions& options) {
  const int h = sample.rgb.height, w = sample.rgb.width;
  const int k = model.config().num_classes;
  std::vector<double> acc(static_cast<std::size_t>(k) * h * w, 0.0);
  int passes = 0;
  auto accumulate = [&](const Tensor<T>& logits) {
    const auto p = softmax_channels(logits);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(p[i]);
    ++passes;
  };
  if (!options.multiscale) {
    accumulate(model.forward(sample, sample.seed));
    return argmax_labels(acc, k, h, w);
  }
  if (options.scales.empty()) throw ConfigError("multi-scale prediction needs at least one scale");
  for (double s : options.scales) {
    if (!(s > 0)) throw ConfigError("prediction scales must be > 0");
    const int sh = std::max(8, static_cast<int>(std::lround(h * s / 8.0)) * 8);
    const int sw = std::max(8, static_cast<int>(std::lround(w * s / 8.0)) * 8);
    for (int f = 0; f < (options.flip ? 2 : 1); ++f) {
      auto logits = model.forward(resized(sample, sh, sw, f == 1), sample.seed).detach();
      if (f == 1) logits = flip_horizontal(logits);
      if (sh != h || sw != w) logits = resize_bilinear(logits, h, w);
      accumulate(logits);
    }
  }
  for (auto& v : acc) v /= passes;
  return argmax_labels(acc, k, h, w);
}

template <typename T>
ConfusionMatrix evaluate(const SegNet<T>& model, const std::vector<SegSample>& samples,
                         const PredictOptions& options) {
  ConfusionMatrix cm(model.config().num_classes);
  for (const auto& s : samples) cm.update(predict(model, s, options), s.labels);
  return cm;
}

template <typename T>
void save_model(const std::filesystem::path& path, const SegNet<T>& model, const TrainConfig& train_config) {
  save_checkpoint(path, model.config().echo() + train_config.echo(), model.params());
}

template <typename T>
SegNet<T> load_model(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint<T>(path);
  SegNet<T> model(parse_segnet_config(ckpt.header), 0);
  const auto& want = model.params().entries();
  const auto& have = ckpt.params.entries();
  if (want.size() != have.size()) {
    throw IoError(path.string() + ": checkpoint holds " + std::to_string(have.size()) + " tensors, model needs " +
                  std::to_string(want.size()));
  }
  for (const auto& e : want) {
    if (!ckpt.params.contains(e.name)) throw IoError(path.string() + ": missing parameter " + e.name);
  }
  model.params().load_values(ckpt.params);
  return model;
}

template class SegNet<float>;
template class SegNet<double>;
template class AdamW<float>;
template class AdamW<double>;

#define PDSEG_INSTANTIATE_SEGNET(T)                                                                          \
  template LossTerms<T> segmentation_loss(const Tensor<T>&, const LabelMap&, const LossWeights&);           \
  template TrainResult train(SegNet<T>&, const std::vector<SegSample>&, const TrainConfig&,                 \
                             const std::vector<SegSample>*);                                                 \
  template LabelMap predict(const SegNet<T>&, const SegSample&, const PredictOptions&);                     \
  template ConfusionMatrix evaluate(const SegNet<T>&, const std::vector<SegSample>&, const PredictOptions&); \
  template void save_model(const std::filesystem::path&, const SegNet<T>&, const TrainConfig&);             \
  template SegNet<T> load_model(const std::filesystem::path&);

PDSEG_INSTANTIATE_SEGNET(float)
PDSEG_INSTANTIATE_SEGNET(double)

}  // namespace pdseg
