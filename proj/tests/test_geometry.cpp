#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/LU>

#include "atv/geometry.hpp"
#include "atv/verify.hpp"
#include "test_util.hpp"

using namespace atv;
using namespace atv::geometry;
using atv::test::pinhole;

TEST(Camera, RejectsBrokenInvariants) {
  Camera c = pinhole(100, 40, 30);
  EXPECT_NO_THROW(c.validate());
  Camera bad = c;
  bad.R(0, 0) = 2.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.K(1, 0) = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.depth_min = 3000.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.R = -Mat3::Identity();
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ScaleCamera, HalvesIntrinsicsPerLevel) {
  Camera c = pinhole(1600, 800, 592);
  const Camera s0 = scale_camera(c, 0);
  EXPECT_EQ(s0.K, c.K);
  EXPECT_DOUBLE_EQ(scale_camera(c, 2).K(0, 0), 400.0);
  const Camera s1 = scale_camera(c, 1);
  EXPECT_DOUBLE_EQ(s1.K(0, 2), 400.0);
  EXPECT_DOUBLE_EQ(s1.K(1, 2), 296.0);
  EXPECT_EQ(s1.R, c.R);
  EXPECT_EQ(s1.t, c.t);
}

TEST(PlaneHomography, SameCameraIsIdentity) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const Camera c = verify::random_camera(rng, 32, 40, 0.3, 50.0);
    for (double d : {1.0, 37.5, 1e4}) {
      EXPECT_LT((plane_homography(c, c, d) - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(PlaneHomography, TranslatedCamera) {
  const Camera ref = pinhole(100, 0, 0);
  // Source camera centre at x = +0.5: a point at depth 50 moves one pixel left.
  Camera src = pinhole(100, 0, 0, Vec3(-0.5, 0, 0));
  ASSERT_NEAR(src.center().x(), 0.5, 1e-15);
  const Mat3 H = plane_homography(ref, src, 50.0);
  for (double u : {-3.0, 0.0, 7.25}) {
    const Vec3 p = H * Vec3(u, 2.0, 1.0);
    EXPECT_NEAR(p.x() / p.z(), u - 1.0, 1e-12);
    EXPECT_NEAR(p.y() / p.z(), 2.0, 1e-12);
  }
  // t = (0.5, 0, 0) in X_cam = R X + t is the mirrored setup.
  src.t = Vec3(0.5, 0, 0);
  const Vec3 q = plane_homography(ref, src, 50.0) * Vec3(3.0, 0.0, 1.0);
  EXPECT_NEAR(q.x() / q.z(), 4.0, 1e-12);
}

TEST(PlaneHomography, InfiniteDepthLimitIsRotationOnly) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    const Camera ref = verify::random_camera(rng, 32, 40, 0.2, 10.0);
    const Camera src = verify::random_camera(rng, 32, 40, 0.2, 10.0);
    Mat3 R_rel;
    Vec3 t_rel;
    relative_pose(ref, src, R_rel, t_rel);
    const Mat3 rot = src.K * R_rel * ref.K.inverse();
    EXPECT_LT((plane_homography(ref, src, 1e9) - rot).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(PlaneHomography, RejectsNonPositiveDepth) {
  const Camera c = pinhole(100, 0, 0);
  EXPECT_THROW(plane_homography(c, c, 0.0), std::invalid_argument);
}

TEST(WarpByHomography, IdentityCopies) {
  const Tensor F = atv::test::smooth_map(3, 9, 11);
  const auto r = warp_by_homography(F, Mat3::Identity());
  EXPECT_TRUE(atv::test::bitwise_equal(r.warped, F));
  for (auto b : r.valid.bits) EXPECT_TRUE(b);
}

TEST(WarpByHomography, IntegerShift) {
  const Tensor F = atv::test::smooth_map(2, 7, 10);
  Mat3 H = Mat3::Identity();
  H(0, 2) = 1.0;
  const auto r = warp_by_homography(F, H);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x) EXPECT_NEAR(r.warped.at(c, y, x), F.at(c, y, x + 1), 1e-12);
  for (int y = 0; y < 7; ++y) {
    EXPECT_FALSE(r.valid.bits[y * 10 + 9]);
    for (int c = 0; c < 2; ++c) EXPECT_EQ(r.warped.at(c, y, 9), 0.0);
  }
}

TEST(WarpByHomography, FullyOutOfBounds) {
  const Tensor F = atv::test::smooth_map(2, 6, 6);
  Mat3 H = Mat3::Identity();
  H(0, 2) = 1000.0;
  const auto r = warp_by_homography(F, H);
  for (auto b : r.valid.bits) EXPECT_FALSE(b);
  for (double v : r.warped.values()) EXPECT_EQ(v, 0.0);
}

TEST(WarpByHomography, ForwardThenInverseRecoversInterior) {
  Tensor F({1, 40, 48});
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 48; ++x) F.at(0, y, x) = std::sin(0.03 * x + 0.02 * y) + 0.5 * std::cos(0.025 * y);
  Mat3 H;
  H << 1.02, 0.01, 0.7, -0.015, 0.99, -0.4, 0.0, 0.0, 1.0;
  const auto a = warp_by_homography(F, H);
  const auto b = warp_by_homography(a.warped, H.inverse());
  for (int y = 4; y < 36; ++y)
    for (int x = 4; x < 44; ++x) EXPECT_NEAR(b.warped.at(0, y, x), F.at(0, y, x), 1e-3);
}

TEST(WarpByDepthField, ConstantFieldMatchesHomography) {
  std::mt19937_64 rng(2);
  const int H = 12, W = 16;
  const Camera ref = verify::random_camera(rng, H, W, 0.05, 5.0);
  const Camera src = verify::random_camera(rng, H, W, 0.05, 5.0);
  const Tensor F = verify::random_tensor(rng, {3, H, W});
  const auto field = sample_uniform_depths(400.0, 700.0, 4, {H, W});
  const auto stack = warp_by_depth_field(F, ref, src, field);
  for (int d = 0; d < 4; ++d) {
    const auto single = warp_by_homography(F, plane_homography(ref, src, field.values[d * H * W]));
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < H * W; ++p) {
        EXPECT_NEAR(stack.warped[(static_cast<std::size_t>(d) * 3 + c) * H * W + p], single.warped[c * H * W + p], 1e-5);
      }
    for (int p = 0; p < H * W; ++p) EXPECT_EQ(stack.valid.bits[d * H * W + p], single.valid.bits[p]);
  }
}

TEST(WarpByDepthField, SameCameraCopies) {
  const Camera c = pinhole(30, 7, 5);
  const Tensor F = atv::test::smooth_map(2, 10, 14);
  const auto stack = warp_by_depth_field(F, c, c, sample_uniform_depths(5.0, 50.0, 3, {10, 14}));
  for (int d = 0; d < 3; ++d)
    for (std::size_t i = 0; i < F.size(); ++i) EXPECT_NEAR(stack.warped[d * F.size() + i], F[i], 1e-12);
}

TEST(WarpByDepthField, SinglePixelManualBilinear) {
  const Camera ref = pinhole(10, 0, 0);
  const Camera src = pinhole(10, 0, 0, Vec3(0.13, 0.06, 0));
  Tensor F({1, 4, 4});
  for (std::size_t i = 0; i < F.size(); ++i) F[i] = static_cast<double>(i * i % 7);
  DepthHypothesisField field;
  field.values = Tensor({1, 4, 4}, 1.0);
  // Reference pixel (0, 0) at depth 1 is the point (0, 0, 1); it lands at
  // (10 * 0.13, 10 * 0.06) = (1.3, 0.6) in the source.
  const auto stack = warp_by_depth_field(F, ref, src, field);
  const double ax = 0.3, ay = 0.6;
  const double expect = (1 - ay) * ((1 - ax) * F[1] + ax * F[2]) + ay * ((1 - ax) * F[5] + ax * F[6]);
  EXPECT_NEAR(stack.warped[0], expect, 1e-12);
  EXPECT_TRUE(stack.valid.bits[0]);
}

TEST(SampleUniformDepths, Examples) {
  const auto f = sample_uniform_depths(425.0, 935.0, 32, {2, 3});
  EXPECT_EQ(f.count(), 32);
  EXPECT_DOUBLE_EQ(f.values[0], 425.0);
  EXPECT_DOUBLE_EQ(f.values[31 * 6], 935.0);
  EXPECT_NEAR(f.values[6] - f.values[0], 510.0 / 31.0, 1e-12);
  const auto two = sample_uniform_depths(1e-3, 5.0, 2, {1, 1});
  EXPECT_DOUBLE_EQ(two.values[0], 1e-3);
  EXPECT_DOUBLE_EQ(two.values[1], 5.0);
  const auto three = sample_uniform_depths(400.0, 600.0, 3, {1, 1});
  EXPECT_DOUBLE_EQ(three.values[1], 500.0);
}

TEST(SampleUniformDepths, IncreasingAndSymmetric) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(1.0, 1000.0);
  for (int i = 0; i < 50; ++i) {
    const double a = u(rng), b = a + u(rng);
    const int D = 2 + static_cast<int>(rng() % 40);
    const auto f = sample_uniform_depths(a, b, D, {1, 1});
    EXPECT_NO_THROW(f.validate_increasing());
    for (int d = 0; d < D; ++d) EXPECT_NEAR(f.values[d] + f.values[D - 1 - d], a + b, 1e-9 * (a + b));
  }
}

TEST(ProjectPixel, Examples) {
  const Camera ref = pinhole(100, 0, 0);
  const auto same = project_pixel(ref, ref, Vec2(3.5, 2.0), 80.0, {10, 10});
  EXPECT_NEAR(same.uv.x(), 3.5, 1e-12);
  EXPECT_NEAR(same.uv.y(), 2.0, 1e-12);
  EXPECT_TRUE(same.in_bounds);
  const Camera src = pinhole(100, 0, 0, Vec3(-0.5, 0, 0));
  const auto moved = project_pixel(ref, src, Vec2(4.0, 1.0), 50.0, {10, 10});
  EXPECT_NEAR(moved.uv.x(), 3.0, 1e-12);
  // Pixel 0 at depth 10 sees x = 0; a 0.5 baseline shifts it by -5.
  const auto out = project_pixel(ref, src, Vec2(0.0, 1.0), 10.0, {10, 10});
  EXPECT_NEAR(out.uv.x(), -5.0, 1e-12);
  EXPECT_FALSE(out.in_bounds);
}

TEST(ProjectPixel, BackProjectionRoundTrip) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> px(0.0, 79.0), depth(10.0, 1500.0);
  for (int i = 0; i < 2000; ++i) {
    const Camera ref = verify::random_camera(rng, 64, 80, 0.3, 40.0);
    const Camera src = verify::random_camera(rng, 64, 80, 0.3, 40.0);
    const Vec2 x(px(rng), px(rng) * 63.0 / 79.0);
    const double d = depth(rng);
    const auto p = project_pixel(ref, src, x, d, {64, 80});
    if (!p.in_front) continue;
    const Vec3 X = ref.back_project(x, d);
    EXPECT_LT((src.back_project(p.uv, p.src_depth) - X).norm(), 1e-6);
  }
}

TEST(CameraFile, ParseFormatRoundTrip) {
  std::mt19937_64 rng(5);
  CameraFile cf;
  cf.camera = verify::random_camera(rng, 64, 80, 0.2, 30.0);
  cf.depth_interval = 2.5;
  cf.depth_count = 192;
  const CameraFile back = parse_camera(format_camera(cf));
  EXPECT_EQ(back.camera.K, cf.camera.K);
  EXPECT_EQ(back.camera.R, cf.camera.R);
  EXPECT_EQ(back.camera.t, cf.camera.t);
  EXPECT_EQ(back.camera.depth_min, cf.camera.depth_min);
  EXPECT_EQ(back.camera.depth_max, cf.camera.depth_max);
  EXPECT_EQ(back.depth_interval, 2.5);
  EXPECT_EQ(back.depth_count, 192);
}

TEST(CameraFile, ParseErrorsNameTheLine) {
  const std::string good =
      "extrinsic\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\nintrinsic\n100 0 40\n0 100 30\n0 0 1\n\n425 2.5 192 935\n";
  EXPECT_NO_THROW(parse_camera(good, "a.txt"));
  std::string bad = good;
  bad.replace(bad.find("0 100 30"), 8, "0 x 30  ");
  try {
    parse_camera(bad, "a.txt");
    FAIL() << "no exception";
  } catch (const CameraParseError& e) {
    EXPECT_EQ(e.file(), "a.txt");
    EXPECT_GT(e.line(), 0);
  }
  EXPECT_THROW(parse_camera("extrinsic\n1 0 0\n", "b.txt"), CameraParseError);
}
