#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "atv/geometry.hpp"

namespace atv::synthetic {

using geometry::Vec3;

/// Solid texture: albedo * (0.35 + 0.65 * t(X)) with t a sum of three
/// sinusoids of X along fixed directions. `frequency` is in radians per
/// scene unit for the lowest component.
struct Texture {
  Vec3 albedo = Vec3(0.8, 0.8, 0.8);
  double frequency = 0.08;
  std::array<Vec3, 3> directions = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  std::array<Vec3, 3> phases = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};  // per channel

  Vec3 color(const Vec3& X) const;
};

struct Primitive {
  enum class Kind { Plane, Sphere };
  Kind kind = Kind::Plane;
  Vec3 center = Vec3(0, 0, 600);  // plane: a point on the plane
  Vec3 normal = Vec3(0, 0, -1);   // plane only
  double radius = 0.0;            // sphere radius; plane half-extent (0 = unbounded)
  Texture texture;
};

struct SceneSpec {
  int height = 64;
  int width = 80;
  int views = 3;
  double focal = 80.0;
  double depth_min = 425.0;
  double depth_max = 935.0;
  /// Cameras sit on a ring of this radius around the point (0, 0, r) and
  /// look at it. View 0 is unperturbed at the origin (world frame = its
  /// camera frame); view v > 0 sits at +-ceil(v/2) * ring_step radians,
  /// jittered in azimuth and elevation.
  double look_at_depth = 680.0;
  double ring_step = 0.08;
  double jitter = 0.01;
  Vec3 light = Vec3(-0.3, -0.5, -1.0);  // direction towards the light (world)
  double ambient = 0.3;
  std::vector<Primitive> primitives;

  /// Throws std::invalid_argument for specs the renderer cannot handle.
  void validate() const;
};

struct SyntheticScene {
  std::vector<Tensor> images;  // per view 3 x H x W in [0, 1]
  std::vector<geometry::Camera> cameras;
  std::vector<Tensor> depths;  // per view H x W, 0 where no surface is hit
  SceneSpec spec;

  const Tensor& gt_depth() const { return depths.at(0); }
  int view_count() const { return static_cast<int>(images.size()); }
};

constexpr int kMaxPrimitives = 8;

/// Ring cameras of `spec` with seed-dependent jitter.
std::vector<geometry::Camera> ring_cameras(const SceneSpec& spec, std::uint64_t seed);

/// Ray-cast render of every view. Camera depth bounds are the spec range,
/// widened with a 1% margin where a view sees surfaces outside it.
SyntheticScene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed);

/// Background plane (tilted at most 6 degrees) plus either a sphere or a
/// square plane patch in front of it, all with random textures.
SceneSpec random_two_primitive_spec(const SceneSpec& base, std::uint64_t seed);

/// Same window in every view; principal points shift by the crop offset.
SyntheticScene crop_scene(const SyntheticScene& scene, int top, int left, int height, int width);

/// Parses a key = value scene description over the SceneSpec defaults.
/// Scalar keys: height, width, views, focal, depth_min, depth_max,
/// look_at_depth, ring_step, jitter, ambient; `light = x y z`. Each
/// primitive is one line:
///   primitive = plane center X Y Z normal X Y Z [half_extent R] [albedo R G B] [frequency F]
///   primitive = sphere center X Y Z radius R [albedo R G B] [frequency F]
/// Texture directions, phases and unspecified albedo/frequency are drawn
/// from `seed`. Throws std::invalid_argument naming source and line.
SceneSpec parse_scene_spec(const std::string& text, const std::string& source, std::uint64_t seed);
/// Inverse of parse_scene_spec up to the seed-drawn texture directions and phases.
std::string format_scene_spec(const SceneSpec& spec);

/// Writes images/, cams/, depths/ and pair.txt under `dir`.
void write_scene(const SyntheticScene& scene, const std::string& dir);

}  // namespace atv::synthetic
