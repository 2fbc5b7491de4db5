#pragma once

// Gradient-check cases shared by the unit tests, the CLI and the acceptance binary.
// Each case builds random f64 inputs for a seed and a scalar function of them.
// Ops with tensor outputs are reduced through a fixed random linear functional
// Σ R⊙y so that every output element carries an O(1) weight.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pdseg/data.hpp"
#include "pdseg/diffusion.hpp"
#include "pdseg/gradcheck.hpp"
#include "pdseg/ops.hpp"
#include "pdseg/pdam.hpp"
#include "pdseg/segnet.hpp"

namespace pdseg::gradsuite {

using D = Tensor<double>;

inline D random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return D::from(std::move(shape), std::move(v), grad);
}

/// Σ R⊙y with R drawn from the given generator state.
inline D project(const D& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, -1.0, 1.0, false)));
}

struct GradCase {
  std::string name;
  GradCheckOptions options;
  // Builds (fn, inputs) for a seed.
  std::function<std::pair<ScalarFn, std::vector<D>>(std::uint64_t)> build;
};

inline std::vector<std::uint8_t> random_labels(std::size_t n, int k, std::mt19937_64& rng, double ignore_p) {
  std::uniform_int_distribution<int> cls(0, k - 1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::uint8_t> out(n);
  for (auto& l : out) l = u(rng) < ignore_p ? kIgnoreLabel : static_cast<std::uint8_t>(cls(rng));
  return out;
}

/// Every differentiable op, plus the composite modules.
inline std::vector<GradCase> op_grad_cases() {
  std::vector<GradCase> cases;
  auto unary = [&](std::string name, Shape shape, std::function<D(const D&)> op, double lo = -1, double hi = 1) {
    cases.push_back({name, {}, [=](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       std::vector<D> in{random_tensor(shape, rng, lo, hi)};
                       ScalarFn fn = [=](const std::vector<D>& x) { return project(op(x[0]), seed ^ 0xabc); };
                       return std::make_pair(fn, in);
                     }});
  };
  auto conv_case = [&](std::string name, Shape in_shape, Shape w_shape, bool bias, Conv2dOptions o) {
    cases.push_back({name, {}, [=](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       std::vector<D> in{random_tensor(in_shape, rng), random_tensor(w_shape, rng)};
                       if (bias) in.push_back(random_tensor({w_shape[0]}, rng));
                       ScalarFn fn = [=](const std::vector<D>& x) {
                         return project(conv2d(x[0], x[1], bias ? x[2] : D{}, o), seed ^ 0xabc);
                       };
                       return std::make_pair(fn, in);
                     }});
  };
  conv_case("conv2d_3x3_same", {1, 3, 6, 6}, {4, 3, 3, 3}, true, {1, 1, 1});
  conv_case("conv2d_3x3_stride2", {2, 3, 8, 8}, {5, 3, 3, 3}, true, {2, 1, 1});
  conv_case("conv2d_depthwise_5x5", {1, 3, 7, 7}, {3, 1, 5, 5}, false, {1, 2, 3});
  conv_case("conv2d_pointwise", {1, 6, 5, 4}, {3, 6, 1, 1}, true, {});
  conv_case("conv2d_valid_rect", {1, 2, 6, 5}, {3, 2, 2, 3}, true, {1, 0, 1});

  unary("global_max_pool", {2, 3, 4, 5}, [](const D& x) { return global_pool(x, PoolMode::kMax); });
  unary("global_avg_pool", {2, 3, 4, 5}, [](const D& x) { return global_pool(x, PoolMode::kAvg); });
  unary("relu", {1, 2, 5, 5}, [](const D& x) { return relu(x); });
  unary("sigmoid", {1, 2, 5, 5}, [](const D& x) { return sigmoid(x); }, -4, 4);
  unary("scale", {3, 4}, [](const D& x) { return scale(x, -2.5); });
  unary("sum", {2, 3, 2}, [](const D& x) { return scale(sum(x), 0.7); });
  unary("mean", {2, 3, 2}, [](const D& x) { return scale(mean(x), 1.3); });
  unary("reshape", {2, 6}, [](const D& x) { return reshape(x, {3, 4}); });
  unary("resize_bilinear_up", {1, 2, 3, 4}, [](const D& x) { return resize_bilinear(x, 7, 9); });
  unary("resize_bilinear_down", {1, 2, 8, 8}, [](const D& x) { return resize_bilinear(x, 3, 5); });
  unary("resize_nearest", {1, 2, 3, 3}, [](const D& x) { return resize_nearest(x, 6, 5); });
  unary("upsample_nearest", {1, 2, 3, 3}, [](const D& x) { return upsample_nearest(x, 2); });
  unary("flip_horizontal", {1, 2, 3, 5}, [](const D& x) { return flip_horizontal(x); });
  unary("split", {1, 6, 3, 3}, [](const D& x) {
    auto parts = split(x, {1, 2, 3}, 1);
    return add(add(sum(parts[0]), scale(sum(parts[1]), 2.0)), scale(sum(mul(parts[2], parts[2])), 0.5));
  });

  cases.push_back({"linear", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<D> in{random_tensor({2, 5}, rng), random_tensor({3, 5}, rng),
                                       random_tensor({3}, rng)};
                     ScalarFn fn = [=](const std::vector<D>& x) { return project(linear(x[0], x[1], x[2]), seed); };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"concat", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<D> in{random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 1, 3, 3}, rng)};
                     ScalarFn fn = [=](const std::vector<D>& x) { return project(concat(x, 1), seed); };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"add_broadcast", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<D> in{random_tensor({1, 3, 4, 4}, rng), random_tensor({1, 3, 1, 1}, rng)};
                     ScalarFn fn = [=](const std::vector<D>& x) { return project(add(x[0], x[1]), seed); };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"mul_broadcast", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<D> in{random_tensor({1, 3, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng)};
                     ScalarFn fn = [=](const std::vector<D>& x) { return project(mul(x[0], x[1]), seed); };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"cross_entropy", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<D> in{random_tensor({1, 4, 5, 5}, rng, -2, 2)};
                     const auto labels = random_labels(25, 4, rng, 0.2);
                     ScalarFn fn = [=](const std::vector<D>& x) { return cross_entropy(x[0], labels); };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"soft_dice", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<D> in{random_tensor({1, 4, 5, 5}, rng, -2, 2)};
                     const auto labels = random_labels(25, 3, rng, 0.2);
                     ScalarFn fn = [=](const std::vector<D>& x) { return soft_dice(x[0], labels); };
                     return std::make_pair(fn, in);
                   }});

  cases.push_back({"pdam_aggregate", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto store = std::make_shared<ParamStore<double>>();
                     PdamConfig cfg;
                     cfg.num_maps = 2;
                     auto pdam = std::make_shared<Pdam<double>>(cfg, *store, "pdam", Init::kFanIn, rng);
                     std::vector<D> in{random_tensor({1, 3, 6, 6}, rng, 0, 1), random_tensor({1, 3, 6, 6}, rng, 0, 1)};
                     for (auto& e : store->entries()) in.push_back(e.tensor);
                     ScalarFn fn = [=](const std::vector<D>& x) {
                       PseudoDepthSet<double> set{{x[0], x[1]}, {"a", "b"}};
                       return project(pdam->aggregate(set), seed);
                     };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"pd_encoder", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto store = std::make_shared<ParamStore<double>>();
                     auto enc = std::make_shared<PdEncoder<double>>(EncoderWidths{4, 6, 4}, *store, "enc",
                                                                    Init::kFanIn, rng);
                     std::vector<D> in{random_tensor({1, 3, 16, 16}, rng, 0, 1)};
                     for (auto& e : store->entries()) in.push_back(e.tensor);
                     ScalarFn fn = [=](const std::vector<D>& x) { return project((*enc)(x[0]), seed); };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"fuse_structured", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const auto sched = std::make_shared<NoiseSchedule>(default_schedule());
                     std::vector<D> in{random_tensor({1, 4, 3, 3}, rng), random_tensor({1, 4, 3, 3}, rng)};
                     ScalarFn fn = [=](const std::vector<D>& x) {
                       return project(fuse_structured(x[0], x[1], *sched, 100), seed);
                     };
                     return std::make_pair(fn, in);
                   }});
  cases.push_back({"fuse_manual", {}, [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<D> in{random_tensor({1, 4, 3, 3}, rng), random_tensor({1, 4, 3, 3}, rng)};
                     ScalarFn fn = [=](const std::vector<D>& x) {
                       return project(fuse_manual(x[0], x[1], 0.9, 0.1), seed);
                     };
                     return std::make_pair(fn, in);
                   }});
  return cases;
}

/// End-to-end case: 32×32 image, K=3, two pseudo-depth maps through PDAM, the
/// encoder, structured fusion, UNet and head, into CE + dice. Inputs are the
/// image, both maps and every parameter tensor; coordinates are sampled.
inline GradCase pipeline_grad_case() {
  GradCheckOptions opt;
  // The network is piecewise linear with thousands of ReLUs downstream of
  // every parameter, so some probes sit on a kink at every usable step.
  // Directional probes cross many kinks at once and are left out here. Most
  // coordinates of a freshly initialised net carry ~1e-9 gradients, so the
  // largest ones are probed alongside a random sample, and anything under
  // 1e-4 (on an O(1) loss) is compared in absolute terms.
  opt.max_coords = 2;
  opt.largest_coords = 2;
  opt.directions = 0;
  opt.max_unresolved = 0.25;
  opt.abs_floor = 1e-4;
  return {"pipeline_32x32", opt, [](std::uint64_t seed) {
            SceneConfig sc;
            sc.image_size = 32;
            sc.num_classes = 3;
            const SegSample sample = gen_scene(sc, mix_seed(seed, 7));
            SegNetConfig mc;
            mc.num_classes = 3;
            mc.fusion = FusionMode::kStructured;
            mc.pd_source = PdSource::parse("pdam:sharp,smooth");
            mc.timesteps = {50};
            auto net = std::make_shared<SegNet<double>>(mc, seed);
            std::vector<D> in{to_tensor<double>(sample.rgb).detach(true)};
            for (const auto& tag : mc.pd_source.profiles) in.push_back(to_tensor<double>(sample.pseudo_map(tag)).detach(true));
            for (auto& e : net->params().entries()) in.push_back(e.tensor);
            const LabelMap labels = sample.labels;
            ScalarFn fn = [net, labels](const std::vector<D>& x) {
              PseudoDepthSet<double> set{{x[1], x[2]}, {"sharp", "smooth"}};
              return segmentation_loss(net->forward(x[0], &set), labels).total;
            };
            return std::make_pair(fn, in);
          }};
}

}  // namespace pdseg::gradsuite
