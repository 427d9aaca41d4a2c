#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "atv/autograd.hpp"
#include "atv/tensor.hpp"

namespace atv::geometry {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

/// Pinhole camera. Pixel centers sit at integer coordinates (x right, y
/// down); world points map to camera coordinates as X_cam = R * X_world + t.
struct Camera {
  Mat3 K = Mat3::Identity();
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  double depth_min = 1.0;
  double depth_max = 2.0;

  /// Throws std::invalid_argument when any invariant is violated.
  void validate() const;
  Vec3 center() const { return -R.transpose() * t; }
  Vec3 to_camera(const Vec3& world) const { return R * world + t; }
  Vec3 to_world(const Vec3& cam) const { return R.transpose() * (cam - t); }
  /// World point of pixel `x` at z-depth `depth` in this camera.
  Vec3 back_project(const Vec2& x, double depth) const;
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

Camera scale_camera(const Camera& cam, int scale);

/// Relative pose taking reference-camera coordinates to source-camera
/// coordinates: X_src = R_rel * X_ref + t_rel.
void relative_pose(const Camera& ref, const Camera& src, Mat3& R_rel, Vec3& t_rel);

/// Homography induced by the plane z = depth of the reference camera,
/// mapping reference pixels to source pixels.
Mat3 plane_homography(const Camera& ref, const Camera& src, double depth);

struct ProjectedPixel {
  Vec2 uv = Vec2::Zero();
  double src_depth = 0.0;  // z in the source camera
  bool in_front = false;
  bool in_bounds = false;
};

ProjectedPixel project_pixel(const Camera& ref, const Camera& src, const Vec2& x, double depth,
                             ImageSize src_size);

/// Per-pixel ordered depth hypotheses, values: D x H x W.
struct DepthHypothesisField {
  Tensor values;
  int scale = 0;

  int count() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
  /// Throws unless every pixel is strictly increasing along D.
  void validate_increasing() const;
};

DepthHypothesisField sample_uniform_depths(double depth_min, double depth_max, int count,
                                           ImageSize shape, int scale = 0);

/// Bilinear sample positions for a D x H x W grid of output cells into an
/// src_h x src_w map. A cell is valid when all four taps lie inside the
/// source map; the top-left tap is clamped so that positions on the last
/// row/column stay valid.
struct SamplingGrid {
  int depth = 0, height = 0, width = 0;
  int src_height = 0, src_width = 0;
  std::vector<int> x0, y0;
  std::vector<double> fx, fy;
  Mask valid;

  std::size_t cells() const { return x0.size(); }
  /// Builds the grid from continuous source coordinates (NaN means invalid).
  static SamplingGrid from_coordinates(int depth, int height, int width,
                                       const std::vector<double>& xs,
                                       const std::vector<double>& ys, ImageSize src);
  /// Bilinear value of channel plane `plane` (src_h x src_w) at cell `i`.
  double sample(const double* plane, std::size_t i) const;
};

SamplingGrid homography_grid(const Mat3& H, ImageSize ref, ImageSize src);
/// One homography per depth slice (constant depth along a slice).
SamplingGrid homography_grid(const std::vector<Mat3>& Hs, ImageSize ref, ImageSize src);
SamplingGrid depth_field_grid(const Camera& ref, const Camera& src,
                              const DepthHypothesisField& depths, ImageSize src_size);

struct WarpResult {
  Tensor warped;  // C x H x W
  Mask valid;     // H x W
};

struct WarpStack {
  Tensor warped;  // D x C x H x W
  Mask valid;     // D x H x W
};

/// Backward warp: output pixel x reads F_src at H * x.
WarpResult warp_by_homography(const Tensor& F_src, const Mat3& H);
WarpStack warp_by_depth_field(const Tensor& F_src, const Camera& ref, const Camera& src,
                              const DepthHypothesisField& depths);
/// Gathers F_src (C x h x w) through `grid` into D x C x H x W; zero where invalid.
WarpStack warp_with_grid(const Tensor& F_src, const SamplingGrid& grid);

/// Differentiable (w.r.t. the sampled map) single-slice bilinear sampling:
/// returns C x H x W for a grid with depth 1.
Var sample_map(const Var& F_src, const SamplingGrid& grid);

// MVSNet-style camera text files.
class CameraParseError : public std::runtime_error {
 public:
  CameraParseError(const std::string& file, int line, const std::string& msg);
  const std::string& file() const { return file_; }
  int line() const { return line_; }

 private:
  std::string file_;
  int line_;
};

struct CameraFile {
  Camera camera;
  double depth_interval = 0.0;
  int depth_count = 0;
};

CameraFile parse_camera(const std::string& text, const std::string& source_name = "<string>");
CameraFile read_camera_file(const std::filesystem::path& path);
std::string format_camera(const CameraFile& cam);
void write_camera_file(const std::filesystem::path& path, const CameraFile& cam);

}  // namespace atv::geometry
