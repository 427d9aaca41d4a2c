#include "atv/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace atv::fusion {

using geometry::Vec2;
using geometry::Vec3;

void FusionThresholds::validate() const {
  if (!(prob_min >= 0.0 && prob_min <= 1.0)) throw std::invalid_argument("prob_min must be in [0, 1]");
  if (!(reproj_max > 0.0)) throw std::invalid_argument("reproj_max must be positive");
  if (!(rel_depth_max > 0.0)) throw std::invalid_argument("rel_depth_max must be positive");
  if (min_views < 1) throw std::invalid_argument("min_views must be >= 1");
}

Mask photometric_filter(const Tensor& depth, const Tensor& confidence, double prob_min) {
  if (!depth.same_shape(confidence)) {
    throw ShapeError("photometric_filter: depth " + shape_str(depth.shape()) + " vs confidence " +
                     shape_str(confidence.shape()));
  }
  Mask m(depth.shape());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    m.bits[i] = depth[i] > 0.0 && confidence[i] >= prob_min ? 1 : 0;
  }
  return m;
}

namespace {

// Bilinear inverse depth at (u, v); NaN when a tap is out of range or empty.
double sample_depth(const Tensor& depth, const Vec2& uv) {
  const int H = depth.dim(0), W = depth.dim(1);
  // Border pixels reproject a few ulps outside the image; snap them back.
  constexpr double kEps = 1e-9;
  if (!(uv.x() >= -kEps && uv.y() >= -kEps && uv.x() <= W - 1 + kEps && uv.y() <= H - 1 + kEps)) {
    return std::nan("");
  }
  const double x = std::clamp(uv.x(), 0.0, W - 1.0), y = std::clamp(uv.y(), 0.0, H - 1.0);
  const int x0 = std::min(static_cast<int>(x), std::max(W - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(H - 2, 0));
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double ax = x - x0, ay = y - y0;
  const double d00 = depth.at(y0, x0), d01 = depth.at(y0, x1);
  const double d10 = depth.at(y1, x0), d11 = depth.at(y1, x1);
  if (!(d00 > 0.0 && d01 > 0.0 && d10 > 0.0 && d11 > 0.0)) return std::nan("");
  const double inv = (1 - ay) * ((1 - ax) / d00 + ax / d01) + ay * ((1 - ax) / d10 + ax / d11);
  return 1.0 / inv;
}

}  // namespace

PairCheck check_pair(const geometry::Camera& cam_v, const Vec2& x, double z,
                     const geometry::Camera& cam_w, const Tensor& depth_w,
                     const FusionThresholds& th) {
  PairCheck r;
  const Vec3 pw = cam_w.K * cam_w.to_camera(cam_v.back_project(x, z));
  if (!(pw.z() > 0.0)) return r;
  r.uv_in_w = pw.head<2>() / pw.z();
  const double zw = sample_depth(depth_w, r.uv_in_w);
  if (!std::isfinite(zw)) return r;
  const Vec3 pv = cam_v.K * cam_v.to_camera(cam_w.back_project(r.uv_in_w, zw));
  if (!(pv.z() > 0.0)) return r;
  const Vec2 back = pv.head<2>() / pv.z();
  r.depth_in_v = pv.z();
  r.pass = (back - x).norm() <= th.reproj_max && std::abs(pv.z() - z) / z <= th.rel_depth_max;
  return r;
}

std::vector<Mask> geometric_filter(const std::vector<Tensor>& depths,
                                   const std::vector<geometry::Camera>& cams,
                                   const FusionThresholds& th, const std::vector<Mask>* prior) {
  th.validate();
  if (depths.size() != cams.size()) throw std::invalid_argument("geometric_filter: one camera per depth map");
  if (prior && prior->size() != depths.size()) {
    throw std::invalid_argument("geometric_filter: one prior mask per depth map");
  }
  const std::size_t V = depths.size();
  std::vector<Mask> out;
  for (std::size_t v = 0; v < V; ++v) {
    const Tensor& d = depths[v];
    const int H = d.dim(0), W = d.dim(1);
    Mask m(d.shape());
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * W + j;
        const double z = d[idx];
        if (!(z > 0.0) || (prior && !(*prior)[v].bits[idx])) continue;
        int consistent = 1;
        for (std::size_t w = 0; w < V && consistent < th.min_views; ++w) {
          if (w == v) continue;
          if (check_pair(cams[v], Vec2(j, i), z, cams[w], depths[w], th).pass) ++consistent;
        }
        m.bits[idx] = consistent >= th.min_views ? 1 : 0;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

PointCloud fuse(const std::vector<Tensor>& depths, const std::vector<Tensor>& images,
                const std::vector<geometry::Camera>& cams, const std::vector<Mask>& masks,
                const FusionThresholds& th) {
  th.validate();
  const std::size_t V = depths.size();
  if (images.size() != V || cams.size() != V || masks.size() != V) {
    throw std::invalid_argument("fuse: depths, images, cameras and masks differ in count");
  }
  std::vector<Mask> consumed;
  for (std::size_t v = 0; v < V; ++v) {
    if (masks[v].shape != depths[v].shape()) throw ShapeError("fuse: mask does not match depth map");
    if (images[v].rank() != 3 || images[v].dim(1) != depths[v].dim(0) ||
        images[v].dim(2) != depths[v].dim(1)) {
      throw ShapeError("fuse: image " + shape_str(images[v].shape()) + " does not match depth " +
                       shape_str(depths[v].shape()));
    }
    consumed.emplace_back(depths[v].shape());
  }
  PointCloud cloud;
  for (std::size_t v = 0; v < V; ++v) {
    const Tensor& d = depths[v];
    const int H = d.dim(0), W = d.dim(1);
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * W + j;
        if (!masks[v].bits[idx] || !(d[idx] > 0.0)) continue;
        if (th.suppress_duplicates && consumed[v].bits[idx]) continue;
        double sum = d[idx];
        int n = 1;
        for (std::size_t w = 0; w < V; ++w) {
          if (w == v) continue;
          const PairCheck c = check_pair(cams[v], Vec2(j, i), d[idx], cams[w], depths[w], th);
          if (!c.pass) continue;
          sum += c.depth_in_v;
          ++n;
          if (th.suppress_duplicates) {
            const int u = static_cast<int>(std::lround(c.uv_in_w.x()));
            const int r = static_cast<int>(std::lround(c.uv_in_w.y()));
            if (r >= 0 && r < depths[w].dim(0) && u >= 0 && u < depths[w].dim(1)) {
              consumed[w].bits[static_cast<std::size_t>(r) * depths[w].dim(1) + u] = 1;
            }
          }
        }
        cloud.points.push_back(cams[v].back_project(Vec2(j, i), sum / n));
        std::array<std::uint8_t, 3> c;
        for (int k = 0; k < 3; ++k) {
          c[k] = static_cast<std::uint8_t>(std::lround(std::clamp(images[v].at(k, i, j), 0.0, 1.0) * 255));
        }
        cloud.colors.push_back(c);
        cloud.source_view.push_back(static_cast<int>(v));
      }
    }
  }
  return cloud;
}

}  // namespace atv::fusion
