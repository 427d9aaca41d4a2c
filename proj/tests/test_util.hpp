#pragma once

#include <cmath>
#include <random>

#include "atv/geometry.hpp"
#include "atv/tensor.hpp"

namespace atv::test {

inline geometry::Camera pinhole(double f, double cx, double cy,
                                const geometry::Vec3& t = geometry::Vec3::Zero(),
                                const geometry::Mat3& R = geometry::Mat3::Identity(),
                                double depth_min = 1.0, double depth_max = 2000.0) {
  geometry::Camera c;
  c.K << f, 0, cx, 0, f, cy, 0, 0, 1;
  c.R = R;
  c.t = t;
  c.depth_min = depth_min;
  c.depth_max = depth_max;
  return c;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

// Smooth C x H x W map, useful where bilinear resampling should be near exact.
inline Tensor smooth_map(int C, int H, int W, double phase = 0.0) {
  Tensor m({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        m.at(c, y, x) = std::sin(0.11 * x + 0.07 * y + 0.5 * c + phase) + 0.3 * std::cos(0.05 * x * y / 8.0);
  return m;
}

}  // namespace atv::test
