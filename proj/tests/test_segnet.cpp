#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "pdseg/segnet.hpp"
#include "pdseg/serialize.hpp"

using namespace pdseg;

namespace {

SegNetConfig rgb_only_config(int k = 6) {
  SegNetConfig c;
  c.num_classes = k;
  c.fusion = FusionMode::kRgbOnly;
  c.pd_source = PdSource::parse("none");
  return c;
}

std::vector<SegSample> small_set(int n, int size = 32, int split = 0) {
  SceneConfig sc;
  sc.image_size = size;
  return make_samples(n, split, sc, default_profiles(), 77);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pdseg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(PdSourceSpec, ParseAndPrint) {
  EXPECT_EQ(PdSource::parse("none").kind, PdSource::Kind::kNone);
  const auto s = PdSource::parse("single:smooth");
  EXPECT_EQ(s.kind, PdSource::Kind::kSingle);
  EXPECT_EQ(s.profiles, std::vector<std::string>{"smooth"});
  EXPECT_EQ(PdSource::parse("pdam").profiles.size(), 3u);
  EXPECT_EQ(PdSource::parse("sum:a,b").str(), "sum:a,b");
  EXPECT_THROW(PdSource::parse("single:a,b"), ConfigError);
  EXPECT_THROW(PdSource::parse("blend:a"), ConfigError);
}

TEST(SegNetConfig, EchoRoundTrips) {
  SegNetConfig c;
  c.fusion = FusionMode::kManual;
  c.w_rgb = 0.8;
  c.w_pd = 0.2;
  c.pd_source = PdSource::parse("sum:sharp,sensor");
  c.timesteps = {0, 50, 200};
  const auto back = parse_segnet_config(c.echo());
  EXPECT_EQ(back.echo(), c.echo());
  EXPECT_THROW(parse_segnet_config("model.bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_segnet_config("model.num_classes = x\n"), ConfigError);
}

TEST(SegNetConfig, ModeAndSourceMustAgree) {
  SegNetConfig c;
  c.pd_source = PdSource::parse("none");
  EXPECT_THROW(c.validate(), ConfigError);
  auto r = rgb_only_config();
  r.pd_source = PdSource::parse("single:sharp");
  EXPECT_THROW(r.validate(), ConfigError);
  auto t = rgb_only_config();
  t.timesteps = {1000};
  EXPECT_THROW(SegNet<float>(t, 0), ConfigError);
}

TEST(SegNet, StemShapeAndZeroInput) {
  SegNet<float> net(rgb_only_config(), 0);
  const auto z = net.stem(Tensor<float>::zeros({1, 3, 64, 64}));
  EXPECT_EQ(z.shape(), (Shape{1, 4, 8, 8}));
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(net.stem(Tensor<float>::zeros({1, 3, 60, 64})), DimensionError);
}

TEST(SegNet, LogitShapeForEveryMode) {
  const auto sample = small_set(1, 64)[0];
  for (const auto& [mode, src] : std::vector<std::pair<std::string, std::string>>{
           {"rgb_only", "none"}, {"gaussian", "none"}, {"structured", "single:sharp"},
           {"manual", "sum:sharp,smooth"}, {"structured", "pdam:sharp,smooth,quantized"}}) {
    SegNetConfig c;
    c.fusion = parse_fusion_mode(mode);
    c.pd_source = PdSource::parse(src);
    SegNet<float> net(c, 1);
    EXPECT_EQ(net.forward(sample).shape(), (Shape{1, 6, 64, 64})) << mode << " " << src;
  }
}

TEST(SegNet, MultiTimestepWidensHead) {
  SegNetConfig c;
  c.timesteps = {0, 100};
  SegNet<float> net(c, 0);
  EXPECT_EQ(net.params().get("head.conv.weight").dim(1), 2 * (16 + 32) + 4);
  EXPECT_EQ(net.forward(small_set(1, 32)[0]).shape(), (Shape{1, 6, 32, 32}));
}

TEST(SegNet, MissingDepthIsAConfigError) {
  SegNet<float> net(SegNetConfig{}, 0);
  EXPECT_THROW(net.forward(Tensor<float>::zeros({1, 3, 32, 32}), nullptr), ConfigError);
}

TEST(SegNet, StructuredWithZeroDepthLatentEqualsRgbOnly) {
  SegNetConfig sc;
  sc.pd_source = PdSource::parse("single:sharp");
  sc.timesteps = {100};
  auto rc = rgb_only_config();
  rc.timesteps = {100};
  SegNet<double> rgb(rc, 3);
  SegNet<double> structured(sc, 9);
  structured.params().load_values(rgb.params());
  for (auto& e : structured.params().entries()) {
    if (e.name.rfind("pd_encoder.conv3", 0) == 0) {
      for (auto& v : e.tensor.mutable_data()) v = 0;
    }
  }
  const auto sample = small_set(1)[0];
  const auto a = rgb.forward(sample);
  const auto b = structured.forward(sample);
  for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.at(i), b.at(i));
}

TEST(SegNet, BackboneGroup) {
  EXPECT_TRUE(SegNet<float>::is_backbone("unet.down1.a.weight"));
  EXPECT_FALSE(SegNet<float>::is_backbone("pdam.mlp.fc1.weight"));
  EXPECT_FALSE(SegNet<float>::is_backbone("head.conv.bias"));
}

TEST(SegLoss, PermutingClassesLeavesLossUnchanged) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  const int k = 4, hw = 36;
  std::vector<double> v(k * hw);
  for (auto& x : v) x = u(rng);
  LabelMap labels(6, 6);
  for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng() % k);
  labels.labels[5] = kIgnoreLabel;
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<double> pv(v.size());
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < hw; ++i) pv[perm[c] * hw + i] = v[c * hw + i];
  LabelMap plabels = labels;
  for (auto& l : plabels.labels) {
    if (l != kIgnoreLabel) l = static_cast<std::uint8_t>(perm[l]);
  }
  const auto a = segmentation_loss(Tensor<double>::from({1, k, 6, 6}, v), labels);
  const auto b = segmentation_loss(Tensor<double>::from({1, k, 6, 6}, pv), plabels);
  EXPECT_NEAR(a.total.item(), b.total.item(), 1e-6);
}

TEST(SegLoss, AllIgnoredFlagged) {
  const LabelMap labels(2, 2, kIgnoreLabel);
  const auto t = segmentation_loss(Tensor<double>::zeros({1, 3, 2, 2}), labels);
  EXPECT_TRUE(t.all_ignored);
  EXPECT_EQ(t.total.item(), 0.0);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParams) {
  ParamStore<double> store;
  store.add("p", {3}, {1, -2, 3});
  store.get("p").mutable_grad();
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  store.zero_grad();
  ASSERT_TRUE(opt.step(store, [](const std::string&) { return 0.1; }));
  EXPECT_EQ(store.get("p").at(1), -2);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamStore<double> store;
  auto& p = store.add("p", {1}, {1.0});
  backward(sum(p));
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  opt.step(store, [](const std::string&) { return 0.1; });
  EXPECT_NEAR(store.get("p").at(0), 0.9, 1e-8);
}

TEST(AdamW, DecoupledDecayOnly) {
  ParamStore<double> store;
  auto& p = store.add("p", {1}, {2.0});
  backward(scale(sum(p), 0.0));
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.05});
  opt.step(store, [](const std::string&) { return 0.1; });
  EXPECT_DOUBLE_EQ(store.get("p").at(0), 2.0 * (1 - 0.005));
}

TEST(AdamW, ConvergesOnConvexQuadratic) {
  ParamStore<double> store;
  auto& p = store.add("p", {2}, {4.0, -3.0});
  const auto target = Tensor<double>::from({2}, {0.5, 1.5});
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 500; ++i) {
    store.zero_grad();
    const auto d = add(p, scale(target, -1.0));
    backward(sum(mul(d, d)));
    opt.step(store, [](const std::string&) { return 0.05; });
  }
  EXPECT_LT(std::abs(store.get("p").at(0) - 0.5), 1e-3);
  EXPECT_LT(std::abs(store.get("p").at(1) - 1.5), 1e-3);
}

TEST(AdamW, NonFiniteGradientSkipsStep) {
  ParamStore<double> store;
  auto& p = store.add("p", {1}, {1.0});
  backward(sum(p));
  store.get("p").mutable_grad()[0] = std::nan("");
  AdamW<double> opt;
  EXPECT_FALSE(opt.step(store, [](const std::string&) { return 0.1; }));
  EXPECT_EQ(opt.skipped(), 1);
  EXPECT_EQ(p.at(0), 1.0);
}

TEST(Train, SameSeedSameParameters) {
  const auto data = small_set(4);
  TrainConfig tc;
  tc.iterations = 6;
  tc.lr_rest = tc.lr_backbone = 1e-3;
  auto run = [&] {
    SegNet<float> net(SegNetConfig{}, 5);
    train(net, data, tc);
    std::vector<float> all;
    for (const auto& e : net.params().entries()) all.insert(all.end(), e.tensor.data().begin(), e.tensor.data().end());
    return all;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, CrossEntropyFallsOverTraining) {
  SceneConfig sc;
  const auto data = make_samples(20, 0, sc, default_profiles(), 3);
  TrainConfig tc;
  tc.iterations = 200;
  tc.batch_size = 1;
  tc.lr_rest = tc.lr_backbone = 2e-3;
  SegNet<float> net(SegNetConfig{}, 1);
  const auto r = train(net, data, tc);
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(r.last_ce, r.first_ce);
}

TEST(Train, TraceHasOneRowPerInterval) {
  const auto data = small_set(3);
  TrainConfig tc;
  tc.iterations = 9;
  tc.eval_interval = 3;
  SegNet<float> net(rgb_only_config(), 0);
  const auto val = small_set(2, 32, 1);
  const auto r = train(net, data, tc, &val);
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace.back().iteration, 9);
  EXPECT_GE(r.trace.back().val_miou, 0.0);
  const auto csv = trace_csv(r.trace);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,ce,dice,val_miou");
}

TEST(Train, DivergenceRestoresLastGoodParameters) {
  const auto data = small_set(2);
  TrainConfig tc;
  tc.iterations = 5;
  tc.lr_rest = tc.lr_backbone = 1e30;  // the first update blows the weights up
  tc.weight_decay = 0;
  SegNet<float> net(rgb_only_config(), 0);
  const auto r = train(net, data, tc);
  EXPECT_TRUE(r.diverged) << "expected a numeric failure";
  for (const auto& e : net.params().entries()) {
    for (float v : e.tensor.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Train, RejectsBadConfig) {
  TrainConfig tc;
  tc.lr_rest = 0;
  SegNet<float> net(rgb_only_config(), 0);
  EXPECT_THROW(train(net, small_set(1), tc), ConfigError);
  EXPECT_THROW(train(net, {}, TrainConfig{}), ConfigError);
}

TEST(Predict, DegenerateMultiScaleEqualsSingleScale) {
  SegNet<float> net(SegNetConfig{}, 2);
  const auto sample = small_set(1, 64)[0];
  PredictOptions ms{.multiscale = true, .scales = {1.0}, .flip = false};
  EXPECT_EQ(predict(net, sample, ms), predict(net, sample));
}

TEST(Predict, MultiScaleHandlesOddLatents) {
  SegNet<float> net(SegNetConfig{}, 2);
  const auto sample = small_set(1, 64)[0];
  const auto out = predict(net, sample, PredictOptions{.multiscale = true});
  EXPECT_EQ(out.height, 64);
  EXPECT_EQ(out.width, 64);
}

TEST(Predict, BiasedHeadLabelsEveryPixel) {
  SegNet<float> net(rgb_only_config(), 0);
  for (auto& v : net.params().get("head.conv.weight").mutable_data()) v = 0;
  net.params().get("head.conv.bias").mutable_data()[4] = 5.0f;
  SegSample s;
  s.rgb = Image(3, 32, 32, 0.3f);
  s.labels = LabelMap(32, 32);
  for (auto ms : {false, true}) {
    const auto out = predict(net, s, PredictOptions{.multiscale = ms});
    for (auto l : out.labels) ASSERT_EQ(l, 4);
  }
}

TEST(Predict, FlipAveragingOnSymmetricInput) {
  SegNet<double> net(rgb_only_config(3), 6);
  SegSample s;
  s.rgb = Image(3, 32, 32);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 16; ++x) {
        const float v = static_cast<float>(std::fmod(0.37 * (c + 1) * (y + 1) + 0.11 * x * x, 1.0));
        s.rgb.at(c, y, x) = v;
        s.rgb.at(c, y, 31 - x) = v;
      }
  // The strided convs are not mirror-equivariant, so the un-flipped logits of a
  // symmetric image are not symmetric; flip averaging makes the averaged
  // probabilities, and hence the labels, exactly mirror-symmetric.
  PredictOptions flip{.multiscale = true, .scales = {1.0}, .flip = true};
  const auto a = predict(net, s, flip);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 16; ++x) ASSERT_EQ(a.at(y, x), a.at(y, 31 - x));
  // Where the plain prediction is already symmetric, flip averaging agrees with it.
  const auto b = predict(net, s);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      if (b.at(y, x) == b.at(y, 31 - x)) EXPECT_EQ(a.at(y, x), b.at(y, x));
    }
}

TEST(Checkpoint, ModelRoundTrip) {
  const auto dir = temp_dir("ckpt");
  SegNetConfig c;
  c.pd_source = PdSource::parse("pdam:sharp,smooth");
  SegNet<float> net(c, 8);
  save_model(dir / "m.ckpt", net, TrainConfig{});
  const auto back = load_model<float>(dir / "m.ckpt");
  EXPECT_EQ(back.config().echo(), c.echo());
  const auto sample = small_set(1)[0];
  const auto a = net.forward(sample);
  const auto b = back.forward(sample);
  for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.at(i), b.at(i));
}

TEST(Evaluate, ConfusionCoversEveryPixel) {
  SegNet<float> net(rgb_only_config(), 0);
  const auto data = small_set(3);
  const auto cm = evaluate(net, data);
  std::uint64_t valid = 0;
  for (const auto& s : data)
    for (auto l : s.labels.labels) valid += l != kIgnoreLabel;
  EXPECT_EQ(cm.total(), valid);
}
