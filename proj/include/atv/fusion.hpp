#pragma once

#include <vector>

#include "atv/geometry.hpp"
#include "atv/pointcloud.hpp"

namespace atv::fusion {

struct FusionThresholds {
  double prob_min = 0.3;
  double reproj_max = 1.0;     // pixels
  double rel_depth_max = 0.01;
  int min_views = 3;           // consistent views, the pixel's own view included
  /// Skip source pixels already consumed by an earlier view. Off by default:
  /// it makes the output depend on view order.
  bool suppress_duplicates = false;

  void validate() const;
};

/// confidence >= prob_min, restricted to positive depths.
Mask photometric_filter(const Tensor& depth, const Tensor& confidence, double prob_min);

/// Result of checking pixel x of view v against view w.
struct PairCheck {
  bool pass = false;
  double depth_in_v = 0.0;  // w's estimate of the point, as z-depth in v
  geometry::Vec2 uv_in_w = geometry::Vec2::Zero();
};

/// Projects x at depth z into w, reads w's depth there (bilinear in inverse
/// depth, all four taps must be positive), back-projects and reprojects
/// into v.
PairCheck check_pair(const geometry::Camera& cam_v, const geometry::Vec2& x, double z,
                     const geometry::Camera& cam_w, const Tensor& depth_w,
                     const FusionThresholds& th);

/// Per-view masks: positive depth, inside `prior` (when given) and
/// consistent in at least min_views views counting the view itself.
std::vector<Mask> geometric_filter(const std::vector<Tensor>& depths,
                                   const std::vector<geometry::Camera>& cams,
                                   const FusionThresholds& th,
                                   const std::vector<Mask>* prior = nullptr);

/// Back-projects every masked pixel at the mean of its own depth and the
/// depths of its consistent matches (expressed in its own view). Colors come
/// from the pixel's own image. Views are processed in index order.
PointCloud fuse(const std::vector<Tensor>& depths, const std::vector<Tensor>& images,
                const std::vector<geometry::Camera>& cams, const std::vector<Mask>& masks,
                const FusionThresholds& th);

}  // namespace atv::fusion
