#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "pdseg/data.hpp"

using namespace pdseg;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pdseg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Classes, ShapeAndBandMapping) {
  EXPECT_EQ(class_shape(1), ShapeType::kRect);
  EXPECT_EQ(class_shape(2), ShapeType::kDisc);
  EXPECT_EQ(class_band(1), 0);
  EXPECT_EQ(class_band(4), 1);
  EXPECT_EQ(band_count(6), 3);
  EXPECT_LT(band_depth(0, 6), band_depth(1, 6));
  EXPECT_LT(band_depth(1, 6), band_depth(2, 6));
}

TEST(Scene, DeterministicAndWellFormed) {
  SceneConfig sc;
  const auto a = gen_scene(sc, 42);
  const auto b = gen_scene(sc, 42);
  EXPECT_EQ(a.rgb.data, b.rgb.data);
  EXPECT_EQ(a.labels, b.labels);
  ASSERT_EQ(a.pseudo.size(), default_profiles().size());
  EXPECT_EQ(a.pseudo[0].data, b.pseudo[0].data);
  for (auto l : a.labels.labels) EXPECT_LT(l, sc.num_classes);
  for (float v : a.rgb.data) EXPECT_TRUE(v >= 0 && v <= 1);
  for (const auto& pd : a.pseudo) {
    EXPECT_EQ(pd.channels, 3);
    const auto [lo, hi] = std::minmax_element(pd.data.begin(), pd.data.end());
    EXPECT_GE(*lo, 0.0f);
    EXPECT_LE(*hi, 1.0f);
  }
  EXPECT_NE(gen_scene(sc, 43).labels, a.labels);
}

TEST(Scene, ObjectsCarryBandDepth) {
  SceneConfig sc;
  SceneObject o{.label = 3, .shape = class_shape(3), .cx = 32, .cy = 32, .rx = 8, .ry = 8, .depth = 0.4};
  const auto s = render_scene(sc, {o}, 1);
  EXPECT_EQ(s.labels.at(32, 32), 3);
  EXPECT_FLOAT_EQ(s.gt_depth.at(0, 32, 32), 0.4f);
  EXPECT_EQ(s.labels.at(2, 2), 0);
}

TEST(Scene, NearerObjectOccludesFartherOne) {
  SceneConfig sc;
  SceneObject far{.label = 5, .shape = ShapeType::kRect, .cx = 30, .cy = 30, .rx = 10, .ry = 10, .depth = 0.65};
  SceneObject near{.label = 2, .shape = ShapeType::kDisc, .cx = 30, .cy = 30, .rx = 5, .ry = 5, .depth = 0.15};
  for (const auto& objs : {std::vector{far, near}, std::vector{near, far}}) {
    const auto s = render_scene(sc, objs, 1);
    EXPECT_EQ(s.labels.at(30, 30), 2);
    EXPECT_EQ(s.labels.at(22, 22), 5);
  }
}

TEST(Scene, NoObjectsFlatGroundGivesConstantDepth) {
  SceneConfig sc;
  sc.min_objects = sc.max_objects = 0;
  sc.ground_tilt = 0;
  const auto s = gen_scene(sc, 5);
  for (auto l : s.labels.labels) EXPECT_EQ(l, 0);
  for (float d : s.gt_depth.data) EXPECT_EQ(d, 1.0f);
  // A constant map cannot be normalized: it becomes 0.5 and is flagged.
  const auto r = perturb_depth(s.gt_depth, PerturbProfile{.name = "id"}, 1);
  EXPECT_TRUE(r.degenerate);
  for (float v : r.map.data) EXPECT_EQ(v, 0.5f);
}

TEST(Perturb, IdentityProfileNormalizesGroundTruth) {
  SceneConfig sc;
  const auto s = gen_scene(sc, 9);
  const auto r = perturb_depth(s.gt_depth, PerturbProfile{.name = "id"}, 3);
  EXPECT_FALSE(r.degenerate);
  const auto [lo, hi] = std::minmax_element(s.gt_depth.data.begin(), s.gt_depth.data.end());
  for (std::size_t i = 0; i < s.gt_depth.data.size(); ++i) {
    EXPECT_NEAR(r.map.data[i], (s.gt_depth.data[i] - *lo) / (*hi - *lo), 1e-6);
  }
  // Positive affine transforms vanish under min-max normalization.
  const auto aff = perturb_depth(s.gt_depth, PerturbProfile{.name = "aff", .scale = 2.5, .shift = -0.3}, 3);
  for (std::size_t i = 0; i < r.map.data.size(); ++i) EXPECT_NEAR(aff.map.data[i], r.map.data[i], 1e-6);
}

TEST(Perturb, QuantizationLimitsDistinctValues) {
  SceneConfig sc;
  const auto s = gen_scene(sc, 2);
  const auto r = perturb_depth(s.gt_depth, PerturbProfile{.name = "q", .quant_levels = 5}, 1);
  std::set<float> values(r.map.data.begin(), r.map.data.end());
  EXPECT_LE(values.size(), 5u);
}

TEST(Perturb, HolesAreZeroFilled) {
  SceneConfig sc;
  const auto s = gen_scene(sc, 2);
  const auto r = perturb_depth(s.gt_depth, PerturbProfile{.name = "h", .holes = 0.2}, 1);
  const auto zeros = std::count(r.map.data.begin(), r.map.data.end(), 0.0f);
  EXPECT_GT(zeros, static_cast<long>(0.05 * r.map.data.size()));
}

TEST(Perturb, RejectsBadProfiles) {
  Image d(1, 8, 8, 0.5f);
  EXPECT_THROW(perturb_depth(d, PerturbProfile{.name = "x", .scale = 0}, 0), ConfigError);
  EXPECT_THROW(perturb_depth(d, PerturbProfile{.name = "x", .quant_levels = 1}, 0), ConfigError);
  EXPECT_THROW(perturb_depth(Image(3, 8, 8), PerturbProfile{.name = "x"}, 0), DimensionError);
  EXPECT_THROW(find_profile(default_profiles(), "lidar"), ConfigError);
}

TEST(SceneConfig, Validation) {
  SceneConfig sc;
  sc.image_size = 60;
  EXPECT_THROW(sc.validate(), ConfigError);
  sc = {};
  sc.num_classes = 1;
  EXPECT_THROW(sc.validate(), ConfigError);
  sc = {};
  sc.min_objects = 4;
  sc.max_objects = 2;
  EXPECT_THROW(gen_scene(sc, 0), ConfigError);
}

TEST(Dataset, ManifestRoundTrip) {
  const auto dir = temp_dir("dataset");
  SceneConfig sc;
  sc.image_size = 32;
  const auto profiles = default_profiles();
  const auto m = build_dataset(dir, 3, 2, sc, profiles, 11);
  EXPECT_EQ(m.entries.size(), 5u);
  const auto back = read_manifest(dir / "manifest.txt");
  EXPECT_EQ(back.scene.image_size, 32);
  EXPECT_EQ(back.profiles.size(), profiles.size());
  ASSERT_EQ(back.split("train").size(), 3u);
  ASSERT_EQ(back.split("test").size(), 2u);
  const auto mem = make_samples(2, 1, sc, profiles, 11);
  for (int i = 0; i < 2; ++i) {
    const auto s = load_sample(back.split("test")[static_cast<std::size_t>(i)], back.profiles);
    EXPECT_EQ(s.seed, mem[static_cast<std::size_t>(i)].seed);
    EXPECT_EQ(s.rgb.data, mem[static_cast<std::size_t>(i)].rgb.data);
    EXPECT_EQ(s.labels, mem[static_cast<std::size_t>(i)].labels);
    EXPECT_EQ(s.pseudo_map("smooth").data, mem[static_cast<std::size_t>(i)].pseudo_map("smooth").data);
  }
}

TEST(Dataset, MalformedManifestReportsOffset) {
  const auto dir = temp_dir("bad_manifest");
  {
    std::ofstream os(dir / "manifest.txt");
    os << "# pdseg manifest v1\n# profiles a b\ntrain 1 x.dftn\n";
  }
  try {
    read_manifest(dir / "manifest.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), std::string("# pdseg manifest v1\n# profiles a b\n").size());
  }
  EXPECT_THROW(read_manifest(dir / "missing.txt"), IoError);
}

TEST(Augment, KeepsSizeAndMarksPadding) {
  SceneConfig sc;
  const auto s = gen_scene(sc, 4);
  Rng rng(1);
  bool saw_ignore = false;
  for (int i = 0; i < 20; ++i) {
    const auto a = augment(s, AugmentConfig{}, rng);
    EXPECT_EQ(a.rgb.height, 64);
    EXPECT_EQ(a.labels.width, 64);
    EXPECT_EQ(a.pseudo.size(), s.pseudo.size());
    for (auto l : a.labels.labels) {
      EXPECT_TRUE(l < 6 || l == 255);
      saw_ignore |= l == 255;
    }
  }
  EXPECT_TRUE(saw_ignore);
}

TEST(Augment, IdentityConfigIsNoOp) {
  SceneConfig sc;
  const auto s = gen_scene(sc, 4);
  Rng rng(1);
  const auto a = augment(s, AugmentConfig{1.0, 1.0, 0.0, 0.0}, rng);
  EXPECT_EQ(a.labels, s.labels);
  EXPECT_EQ(a.rgb.data, s.rgb.data);
}
