#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "atv/evalmetrics.hpp"
#include "atv/verify.hpp"

using namespace atv;
using namespace atv::evalmetrics;

namespace {

PointCloud cloud(std::vector<Vec3> pts) {
  PointCloud c;
  c.points = std::move(pts);
  c.colors.assign(c.points.size(), {0, 0, 0});
  c.source_view.assign(c.points.size(), 0);
  return c;
}

PointCloud random_cloud(std::mt19937_64& rng, int n, double extent = 10.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Vec3> p;
  for (int i = 0; i < n; ++i) p.emplace_back(u(rng), u(rng), u(rng));
  return cloud(p);
}

// 5 x 5 x 5 grid with spacing 10.
PointCloud grid() {
  std::vector<Vec3> p;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      for (int k = 0; k < 5; ++k) p.emplace_back(10.0 * i, 10.0 * j, 10.0 * k);
  return cloud(p);
}

}  // namespace

TEST(NearestNeighbour, Examples) {
  std::mt19937_64 rng(1);
  const auto a = random_cloud(rng, 50);
  for (double d : nearest_neighbor_distances(a.points, a.points)) EXPECT_EQ(d, 0.0);
  const Vec3 b(1, 2, 3);
  const auto d = nearest_neighbor_distances(a.points, {b});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(d[i], (a.points[i] - b).norm(), 1e-12);
}

TEST(NearestNeighbour, TreeEqualsBruteForceExactly) {
  for (int trial = 0; trial < 30; ++trial) {
    std::mt19937_64 rng(100 + trial);
    const auto a = random_cloud(rng, 100), b = random_cloud(rng, 100);
    EXPECT_EQ(nearest_neighbor_distances(a.points, b.points), verify::brute_force_nn(a.points, b.points));
  }
  // Duplicated and collinear points.
  std::vector<Vec3> line;
  for (int i = 0; i < 64; ++i) line.emplace_back(i % 8, 0, 0);
  std::mt19937_64 rng(7);
  const auto q = random_cloud(rng, 40, 9.0);
  EXPECT_EQ(nearest_neighbor_distances(q.points, line), verify::brute_force_nn(q.points, line));
}

TEST(Accuracy, Examples) {
  const auto g = grid();
  PointCloud subset = cloud({g.points.begin(), g.points.begin() + 40});
  EXPECT_EQ(accuracy(subset, g, 20).value, 0.0);
  PointCloud shifted = g;
  for (auto& p : shifted.points) p.x() += 0.25;
  EXPECT_NEAR(accuracy(shifted, g, 20).value, 0.25, 1e-12);
  PointCloud far = g;
  for (auto& p : far.points) p.z() += 1000;
  const auto r = accuracy(far, g, 20);
  EXPECT_TRUE(std::isnan(r.value));
  EXPECT_TRUE(r.warning);
  EXPECT_EQ(r.kept, 0u);
}

TEST(Completeness, Examples) {
  const auto g = grid();
  EXPECT_EQ(completeness(g, g, 20).value, 0.0);
  PointCloud super = g;
  super.points.emplace_back(3, 3, 3);
  super.colors.push_back({0, 0, 0});
  super.source_view.push_back(0);
  EXPECT_EQ(completeness(super, g, 20).value, 0.0);
  // Keep the layers k = 0, 2, 4: the removed layers sit 10 units from a survivor.
  std::vector<Vec3> kept;
  for (const auto& p : g.points)
    if (static_cast<int>(p.z()) % 20 == 0) kept.push_back(p);
  const double expect = (75 * 0.0 + 50 * 10.0) / 125.0;
  EXPECT_NEAR(completeness(cloud(kept), g, 50).value, expect, 1e-12);
}

TEST(FScore, Examples) {
  const auto g = grid();
  const auto same = f_score(g, g, 0.5);
  EXPECT_EQ(same.precision, 100.0);
  EXPECT_EQ(same.recall, 100.0);
  EXPECT_EQ(same.f, 100.0);
  PointCloud far = g;
  for (auto& p : far.points) p.z() += 1000;
  const auto none = f_score(far, g, 1.0);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f, 0.0);
  // Half the reconstruction is far away; every gt point is covered.
  PointCloud half = g;
  for (const auto& p : g.points) {
    half.points.push_back(p + Vec3(0, 0, 1000));
    half.colors.push_back({0, 0, 0});
    half.source_view.push_back(0);
  }
  const auto h = f_score(half, g, 1.0);
  EXPECT_NEAR(h.precision, 50.0, 1e-12);
  EXPECT_NEAR(h.recall, 100.0, 1e-12);
  EXPECT_NEAR(h.f, 66.67, 0.01);
}

TEST(FScore, MonotoneInTau) {
  std::mt19937_64 rng(3);
  const auto a = random_cloud(rng, 200), b = random_cloud(rng, 200);
  double last = -1.0;
  for (double tau = 0.1; tau < 8.0; tau += 0.3) {
    const double f = f_score(a, b, tau).f;
    EXPECT_GE(f, last);
    last = f;
  }
}

TEST(Metrics, RigidTransformInvariance) {
  std::mt19937_64 rng(4);
  const auto a = random_cloud(rng, 150), b = random_cloud(rng, 150);
  const Eigen::Matrix3d R = Eigen::AngleAxisd(0.7, Vec3(1, 2, -0.5).normalized()).toRotationMatrix();
  const Vec3 t(5, -3, 11);
  PointCloud ta = a, tb = b;
  for (auto& p : ta.points) p = R * p + t;
  for (auto& p : tb.points) p = R * p + t;
  EXPECT_NEAR(accuracy(a, b, 20).value, accuracy(ta, tb, 20).value, 1e-9);
  EXPECT_NEAR(completeness(a, b, 20).value, completeness(ta, tb, 20).value, 1e-9);
}

TEST(Evaluate, ReportInvariants) {
  std::mt19937_64 rng(5);
  const auto a = random_cloud(rng, 120), b = random_cloud(rng, 120);
  const auto r = evaluate(a, b, 20, 1.5);
  EXPECT_GE(r.accuracy_mm, 0.0);
  EXPECT_GE(r.completeness_mm, 0.0);
  EXPECT_DOUBLE_EQ(r.overall_mm, (r.accuracy_mm + r.completeness_mm) / 2);
  EXPECT_LE(r.f_score_pct, 100.0);
  EXPECT_EQ(r.recon_points, 120u);
  EXPECT_NE(r.key_values().find("f_score"), std::string::npos);
  EXPECT_NE(r.text().find("Overall"), std::string::npos);
}
