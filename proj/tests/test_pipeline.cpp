#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "atv/pipeline.hpp"
#include "atv/synthetic.hpp"
#include "test_util.hpp"

using namespace atv;
using namespace atv::pipeline;

namespace {

synthetic::SceneSpec small_spec(std::uint64_t seed, int views = 3) {
  synthetic::SceneSpec base;
  base.height = 32;
  base.width = 40;
  base.focal = 40.0;
  base.views = views;
  return synthetic::random_two_primitive_spec(base, seed);
}

TrainSample sample_of(const synthetic::SyntheticScene& s) { return {{s.images, s.cameras}, s.gt_depth()}; }

std::vector<Tensor> snapshot(const Network& net) {
  std::vector<Tensor> out;
  for (const auto& [name, v] : net.params().entries()) out.push_back(v.value());
  return out;
}

bool same_params(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!test::bitwise_equal(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace

TEST(Forward, ShapesFollowTheSchedule) {
  synthetic::SceneSpec base;  // 64 x 80
  const auto scene = synthetic::generate_synthetic_scene(synthetic::random_two_primitive_spec(base, 1), 1);
  NetworkConfig cfg;
  Network net(cfg);
  const auto out = net.forward({scene.images, scene.cameras});
  const int counts[3] = {8, 16, 32};
  for (int s = 0; s < 3; ++s) {
    EXPECT_EQ(out.depth[s].shape(), (Shape{64 >> s, 80 >> s}));
    EXPECT_EQ(out.probs[s].shape(), (Shape{counts[s], 64 >> s, 80 >> s}));
    EXPECT_EQ(out.hypotheses[s].count(), counts[s]);
    EXPECT_NO_THROW(out.hypotheses[s].validate_increasing());
  }
}

TEST(Forward, FinerHypothesesStayInsideTheAdaptiveRange) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(2), 2);
  NetworkConfig cfg;
  cfg.seed = 5;
  Network net(cfg);
  const auto out = net.forward({scene.images, scene.cameras});
  for (int s = 0; s < 2; ++s) {
    const auto& L = out.hypotheses[s];
    const Tensor lo = regression::upsample_bilinear(out.ranges[s].lo, L.height(), L.width());
    const Tensor hi = regression::upsample_bilinear(out.ranges[s].hi, L.height(), L.width());
    const std::size_t plane = static_cast<std::size_t>(L.height()) * L.width();
    for (int d = 0; d < L.count(); ++d)
      for (std::size_t p = 0; p < plane; ++p) {
        EXPECT_GE(L.values[d * plane + p], lo[p] - 1e-9);
        EXPECT_LE(L.values[d * plane + p], hi[p] + 1e-9);
      }
  }
  EXPECT_TRUE(out.ranges[2].lo.empty());
}

TEST(Forward, SingleSourceViewRuns) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(3, 2), 3);
  NetworkConfig cfg;
  cfg.source_views = 1;
  Network net(cfg);
  const auto e = infer(net, {scene.images, scene.cameras});
  EXPECT_EQ(e.depth.shape(), (Shape{32, 40}));
  for (double v : e.depth.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, BitwiseDeterministic) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(4), 4);
  NetworkConfig cfg;
  cfg.seed = 9;
  Network a(cfg), b(cfg);
  const auto x = infer(a, {scene.images, scene.cameras});
  const auto y = infer(b, {scene.images, scene.cameras});
  EXPECT_TRUE(test::bitwise_equal(x.depth, y.depth));
  EXPECT_TRUE(test::bitwise_equal(x.confidence, y.confidence));
}

TEST(Network, StateRoundTrip) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(5), 5);
  NetworkConfig cfg;
  cfg.seed = 1;
  Network a(cfg);
  cfg.seed = 2;
  Network b(cfg);
  b.load_state(a.state());
  EXPECT_TRUE(test::bitwise_equal(infer(a, {scene.images, scene.cameras}).depth,
                                  infer(b, {scene.images, scene.cameras}).depth));
  io::NamedTensors broken = a.state();
  broken.pop_back();
  EXPECT_THROW(b.load_state(broken), io::DataError);
}

TEST(TrainStep, ZeroLearningRateKeepsParameters) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(6), 6);
  NetworkConfig cfg;
  cfg.learning_rate = 0.0;
  Network net(cfg);
  AdamState opt;
  const auto before = snapshot(net);
  const auto bd = train_step(net, opt, {sample_of(scene)});
  EXPECT_GT(bd.total, 0.0);
  EXPECT_TRUE(same_params(before, snapshot(net)));
}

TEST(TrainStep, ZeroLossWeightsGiveZeroLoss) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(7), 7);
  NetworkConfig cfg;
  cfg.loss.beta1 = 0.0;
  cfg.loss.beta2 = 0.0;
  Network net(cfg);
  AdamState opt;
  const auto before = snapshot(net);
  const auto bd = train_step(net, opt, {sample_of(scene)});
  EXPECT_EQ(bd.total, 0.0);
  EXPECT_TRUE(same_params(before, snapshot(net)));
  for (const auto& [name, v] : net.params().entries()) {
    if (!v.has_grad()) continue;
    for (double g : v.grad().values()) EXPECT_EQ(g, 0.0) << name;
  }
}

TEST(TrainStep, NonFiniteLossThrowsAndKeepsParameters) {
  auto scene = synthetic::generate_synthetic_scene(small_spec(8), 8);
  scene.images[0][17] = std::numeric_limits<double>::quiet_NaN();
  Network net(NetworkConfig{});
  AdamState opt;
  const auto before = snapshot(net);
  EXPECT_THROW(train_step(net, opt, {sample_of(scene)}), NumericalError);
  EXPECT_TRUE(same_params(before, snapshot(net)));
  EXPECT_EQ(opt.step, 0);
}

TEST(TrainStep, EveryParameterReceivesGradient) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(9), 9);
  Network net(NetworkConfig{});
  EXPECT_TRUE(dead_parameters(net, sample_of(scene)).empty());
}

// Mean loss over steps 51-100 is at most the mean over steps 1-50 on one
// fixed scene, for every seed.
TEST(TrainStep, RepeatedStepsOnOneSceneReduceLoss) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(10), 10);
  const TrainSample s = sample_of(scene);
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    NetworkConfig cfg;
    cfg.seed = seed;
    Network net(cfg);
    AdamState opt;
    double first = 0.0, second = 0.0;
    for (int step = 0; step < 100; ++step) (step < 50 ? first : second) += train_step(net, opt, {s}).total;
    ok += second <= first;
  }
  EXPECT_GE(ok, 5);
}

TEST(Adam, StateRoundTrip) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(11), 11);
  Network net(NetworkConfig{});
  AdamState opt;
  train_step(net, opt, {sample_of(scene)});
  AdamState copy;
  copy.load_state(net.params(), opt.state(net.params()));
  EXPECT_EQ(copy.step, opt.step);
  ASSERT_EQ(copy.m.size(), opt.m.size());
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    EXPECT_TRUE(test::bitwise_equal(copy.m[i], opt.m[i]));
    EXPECT_TRUE(test::bitwise_equal(copy.v[i], opt.v[i]));
  }
}

TEST(NetworkConfig, Validate) {
  NetworkConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.groups = 5;
  EXPECT_THROW(cfg.validate(), std::exception);
  cfg = NetworkConfig{};
  cfg.depth_counts = {8, 1, 32};
  EXPECT_THROW(cfg.validate(), std::exception);
}

TEST(MeanAbsError, IgnoresInvalidPixels) {
  const Tensor gt({1, 3}, std::vector<double>{100, 0, 200});
  const Tensor d({1, 3}, std::vector<double>{104, 900, 198});
  EXPECT_DOUBLE_EQ(mean_abs_error(d, gt), 3.0);
}

TEST(Synthetic, FrontoParallelPlane) {
  synthetic::SceneSpec spec;
  spec.height = 16;
  spec.width = 20;
  spec.focal = 20;
  synthetic::Primitive plane;
  plane.center = geometry::Vec3(0, 0, 600);
  plane.normal = geometry::Vec3(0, 0, -1);
  spec.primitives = {plane};
  const auto scene = synthetic::generate_synthetic_scene(spec, 3);
  for (double v : scene.gt_depth().values()) EXPECT_NEAR(v, 600.0, 1e-9);
  const auto again = synthetic::generate_synthetic_scene(spec, 3);
  for (int v = 0; v < scene.view_count(); ++v) {
    EXPECT_TRUE(test::bitwise_equal(scene.images[v], again.images[v]));
    EXPECT_TRUE(test::bitwise_equal(scene.depths[v], again.depths[v]));
  }
}

TEST(Synthetic, RejectsBadSpecs) {
  synthetic::SceneSpec spec = small_spec(12);
  spec.depth_min = 900;
  spec.depth_max = 400;
  EXPECT_THROW(synthetic::generate_synthetic_scene(spec, 1), std::invalid_argument);
  spec = small_spec(12);
  spec.primitives.clear();
  EXPECT_THROW(synthetic::generate_synthetic_scene(spec, 1), std::invalid_argument);
}

TEST(Synthetic, CropShiftsPrincipalPoint) {
  const auto scene = synthetic::generate_synthetic_scene(small_spec(13), 13);
  const auto crop = synthetic::crop_scene(scene, 4, 8, 16, 24);
  EXPECT_EQ(crop.images[0].shape(), (Shape{3, 16, 24}));
  EXPECT_DOUBLE_EQ(crop.cameras[1].K(0, 2), scene.cameras[1].K(0, 2) - 8);
  EXPECT_DOUBLE_EQ(crop.cameras[1].K(1, 2), scene.cameras[1].K(1, 2) - 4);
  EXPECT_EQ(crop.depths[0].at(0, 0), scene.depths[0].at(4, 8));
}

TEST(Synthetic, SceneSpecTextRoundTrip) {
  const auto spec = small_spec(14);
  const std::string text = synthetic::format_scene_spec(spec);
  const auto back = synthetic::parse_scene_spec(text, "spec.txt", 0);
  EXPECT_EQ(back.height, spec.height);
  EXPECT_EQ(back.views, spec.views);
  EXPECT_EQ(back.depth_max, spec.depth_max);
  ASSERT_EQ(back.primitives.size(), spec.primitives.size());
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const auto &a = back.primitives[i], &b = spec.primitives[i];
    EXPECT_EQ(a.kind, b.kind);
    EXPECT_LT((a.center - b.center).norm(), 1e-9);
    EXPECT_LT((a.normal - b.normal).norm(), 1e-12);
    EXPECT_EQ(a.radius, b.radius);
    EXPECT_EQ(a.texture.frequency, b.texture.frequency);
    EXPECT_EQ(a.texture.albedo, b.texture.albedo);
  }
  EXPECT_THROW(synthetic::parse_scene_spec("height = 32\nbogus = 1\n", "s.txt", 0), std::invalid_argument);
  EXPECT_THROW(synthetic::parse_scene_spec("primitive = cube center 0 0 1\n", "s.txt", 0), std::invalid_argument);
}
