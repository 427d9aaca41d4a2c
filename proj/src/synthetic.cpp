#include "atv/synthetic.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "atv/io.hpp"
#include "atv/nn.hpp"

namespace atv::synthetic {

namespace {

constexpr double kMultipliers[3] = {1.0, 1.7, 2.9};

geometry::Mat3 look_rotation(const Vec3& center, const Vec3& target) {
  const Vec3 z = (target - center).normalized();
  const Vec3 x = Vec3(0, 1, 0).cross(z).normalized();
  const Vec3 y = z.cross(x);
  geometry::Mat3 R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  return R;
}

struct Hit {
  double s = std::numeric_limits<double>::infinity();  // camera z-depth
  Vec3 point, normal;
  const Primitive* prim = nullptr;
};

// Ray C + s * d where d has unit z in the camera frame, so s is the depth.
void intersect(const Primitive& p, const Vec3& C, const Vec3& d, Hit& best) {
  if (p.kind == Primitive::Kind::Plane) {
    const double denom = p.normal.dot(d);
    if (std::abs(denom) < 1e-12) return;
    const double s = p.normal.dot(p.center - C) / denom;
    if (!(s > 0.0) || s >= best.s) return;
    const Vec3 X = C + s * d;
    if (p.radius > 0.0) {
      const Vec3 u = p.normal.unitOrthogonal();
      const Vec3 w = p.normal.cross(u).normalized();
      const Vec3 off = X - p.center;
      if (std::abs(off.dot(u)) > p.radius || std::abs(off.dot(w)) > p.radius) return;
    }
    best.s = s;
    best.point = X;
    best.normal = denom > 0.0 ? Vec3(-p.normal) : p.normal;
    best.prim = &p;
    return;
  }
  const Vec3 oc = C - p.center;
  const double a = d.dot(d), b = 2.0 * d.dot(oc), c = oc.dot(oc) - p.radius * p.radius;
  const double disc = b * b - 4 * a * c;
  if (disc < 0.0) return;
  const double s = (-b - std::sqrt(disc)) / (2 * a);
  if (!(s > 0.0) || s >= best.s) return;
  best.s = s;
  best.point = C + s * d;
  best.normal = (best.point - p.center) / p.radius;
  best.prim = &p;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

Texture random_texture(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> albedo(0.45, 1.0), freq(0.06, 0.1),
      phase(0.0, 2 * std::numbers::pi);
  Texture t;
  t.albedo = Vec3(albedo(rng), albedo(rng), albedo(rng));
  t.frequency = freq(rng);
  for (int k = 0; k < 3; ++k) {
    t.directions[k] = random_unit(rng);
    t.phases[k] = Vec3(phase(rng), phase(rng), phase(rng));
  }
  return t;
}

// Unit normal facing the camera at the origin, tilted up to `max_tilt` rad
// away from -z.
Vec3 tilted_normal(double max_tilt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> tilt(0.0, max_tilt), az(0.0, 2 * std::numbers::pi);
  const double a = tilt(rng), b = az(rng);
  return -Vec3(std::sin(a) * std::cos(b), std::sin(a) * std::sin(b), std::cos(a));
}

}  // namespace

Vec3 Texture::color(const Vec3& X) const {
  Vec3 out;
  for (int ch = 0; ch < 3; ++ch) {
    double t = 0.0;
    for (int k = 0; k < 3; ++k) {
      t += 0.5 * (1.0 + std::sin(frequency * kMultipliers[k] * directions[k].dot(X) + phases[k][ch]));
    }
    out[ch] = albedo[ch] * (0.35 + 0.65 * t / 3.0);
  }
  return out;
}

void SceneSpec::validate() const {
  if (height < 4 || width < 4) throw std::invalid_argument("scene spec: image must be at least 4x4");
  if (views < 1) throw std::invalid_argument("scene spec: need at least one view");
  if (!(focal > 0.0)) throw std::invalid_argument("scene spec: focal length must be positive");
  if (!(depth_min > 0.0) || !(depth_min < depth_max)) {
    throw std::invalid_argument("scene spec: depth range must satisfy 0 < depth_min < depth_max");
  }
  if (!(look_at_depth > 0.0)) throw std::invalid_argument("scene spec: look_at_depth must be positive");
  if (jitter < 0.0) throw std::invalid_argument("scene spec: jitter must be >= 0");
  if (!(ambient >= 0.0 && ambient <= 1.0)) throw std::invalid_argument("scene spec: ambient in [0, 1]");
  if (light.norm() == 0.0) throw std::invalid_argument("scene spec: zero light direction");
  if (primitives.empty() || primitives.size() > kMaxPrimitives) {
    throw std::invalid_argument("scene spec: between 1 and " + std::to_string(kMaxPrimitives) +
                                " primitives required");
  }
  for (const Primitive& p : primitives) {
    if (p.kind == Primitive::Kind::Sphere && !(p.radius > 0.0)) {
      throw std::invalid_argument("scene spec: sphere radius must be positive");
    }
    if (p.kind == Primitive::Kind::Plane && (std::abs(p.normal.norm() - 1.0) > 1e-9 || p.radius < 0)) {
      throw std::invalid_argument("scene spec: plane needs a unit normal and extent >= 0");
    }
  }
}

std::vector<geometry::Camera> ring_cameras(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(nn::derive_seed(seed, "ring"));
  std::uniform_real_distribution<double> jit(-spec.jitter, spec.jitter);
  const double r = spec.look_at_depth;
  const Vec3 target(0, 0, r);
  geometry::Mat3 K = geometry::Mat3::Identity();
  K(0, 0) = K(1, 1) = spec.focal;
  K(0, 2) = (spec.width - 1) / 2.0;
  K(1, 2) = (spec.height - 1) / 2.0;
  std::vector<geometry::Camera> cams;
  for (int v = 0; v < spec.views; ++v) {
    double theta = 0.0, phi = 0.0;
    if (v > 0) {
      const int k = (v + 1) / 2;
      theta = (v % 2 ? 1.0 : -1.0) * k * spec.ring_step + jit(rng);
      phi = jit(rng);
    }
    const Vec3 C = target + r * Vec3(std::sin(theta) * std::cos(phi), std::sin(phi),
                                     -std::cos(theta) * std::cos(phi));
    geometry::Camera cam;
    cam.K = K;
    cam.R = v == 0 ? geometry::Mat3::Identity() : look_rotation(C, target);
    cam.t = v == 0 ? Vec3::Zero() : Vec3(-cam.R * C);
    cam.depth_min = spec.depth_min;
    cam.depth_max = spec.depth_max;
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

SyntheticScene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
  SyntheticScene scene;
  scene.spec = spec;
  scene.cameras = ring_cameras(spec, seed);
  const Vec3 light = spec.light.normalized();
  const int H = spec.height, W = spec.width;
  for (const geometry::Camera& cam : scene.cameras) {
    Tensor img({3, H, W});
    Tensor depth({H, W});
    const geometry::Mat3 Kinv = cam.K.inverse();
    const Vec3 C = cam.center();
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const Vec3 d = cam.R.transpose() * (Kinv * Vec3(j, i, 1.0));
        Hit hit;
        for (const Primitive& p : spec.primitives) intersect(p, C, d, hit);
        if (!hit.prim) continue;
        const double shade = spec.ambient + (1.0 - spec.ambient) * std::max(0.0, hit.normal.dot(light));
        const Vec3 color = hit.prim->texture.color(hit.point) * shade;
        for (int c = 0; c < 3; ++c) img.at(c, i, j) = std::clamp(color[c], 0.0, 1.0);
        depth.at(i, j) = hit.s;
      }
    }
    scene.images.push_back(std::move(img));
    scene.depths.push_back(std::move(depth));
  }
  // The written range must contain every true depth of the view.
  for (int v = 0; v < scene.view_count(); ++v) {
    geometry::Camera& cam = scene.cameras[v];
    for (double z : scene.depths[v].values()) {
      if (z <= 0.0) continue;
      if (z < cam.depth_min) cam.depth_min = 0.99 * z;
      if (z > cam.depth_max) cam.depth_max = 1.01 * z;
    }
  }
  return scene;
}

SceneSpec random_two_primitive_spec(const SceneSpec& base, std::uint64_t seed) {
  std::mt19937_64 rng(nn::derive_seed(seed, "two-primitive"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };
  SceneSpec spec = base;
  spec.primitives.clear();

  Primitive bg;
  bg.kind = Primitive::Kind::Plane;
  bg.center = Vec3(0, 0, uni(740, 790));
  bg.normal = tilted_normal(6.0 * std::numbers::pi / 180, rng);
  bg.texture = random_texture(rng);
  spec.primitives.push_back(bg);

  Primitive fg;
  const double z = uni(560, 680);
  fg.center = Vec3(uni(-0.12, 0.12) * z, uni(-0.1, 0.1) * z, z);
  if (u(rng) < 0.5) {
    fg.kind = Primitive::Kind::Sphere;
    fg.radius = uni(50, 90);
  } else {
    fg.kind = Primitive::Kind::Plane;
    fg.normal = tilted_normal(25.0 * std::numbers::pi / 180, rng);
    fg.radius = uni(50, 90);
  }
  fg.texture = random_texture(rng);
  spec.primitives.push_back(fg);
  return spec;
}

SyntheticScene crop_scene(const SyntheticScene& scene, int top, int left, int height, int width) {
  SyntheticScene out;
  out.spec = scene.spec;
  out.spec.height = height;
  out.spec.width = width;
  for (int v = 0; v < scene.view_count(); ++v) {
    const Tensor& img = scene.images[v];
    if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > img.dim(1) ||
        left + width > img.dim(2)) {
      throw std::invalid_argument("crop_scene: window outside the image");
    }
    Tensor ci({3, height, width});
    Tensor cd({height, width});
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) {
        for (int c = 0; c < 3; ++c) ci.at(c, i, j) = img.at(c, top + i, left + j);
        cd.at(i, j) = scene.depths[v].at(top + i, left + j);
      }
    geometry::Camera cam = scene.cameras[v];
    cam.K(0, 2) -= left;
    cam.K(1, 2) -= top;
    out.images.push_back(std::move(ci));
    out.depths.push_back(std::move(cd));
    out.cameras.push_back(cam);
  }
  return out;
}

void write_scene(const SyntheticScene& scene, const std::string& dir) {
  const io::fs::path root(dir);
  const int V = scene.view_count();
  std::vector<io::ViewPair> pairs;
  for (int v = 0; v < V; ++v) {
    const std::string stem = io::view_stem(v);
    io::write_png(root / "images" / (stem + ".png"), scene.images[v]);
    io::write_pfm(root / "depths" / (stem + ".pfm"), scene.depths[v]);
    geometry::CameraFile cf;
    cf.camera = scene.cameras[v];
    cf.depth_count = 192;
    cf.depth_interval = (cf.camera.depth_max - cf.camera.depth_min) / (cf.depth_count - 1);
    geometry::write_camera_file(root / "cams" / (stem + "_cam.txt"), cf);

    io::ViewPair p;
    p.ref = v;
    std::vector<std::pair<double, int>> order;
    for (int w = 0; w < V; ++w) {
      if (w != v) order.emplace_back((scene.cameras[w].center() - scene.cameras[v].center()).norm(), w);
    }
    std::sort(order.begin(), order.end());
    for (const auto& [dist, w] : order) {
      p.sources.push_back(w);
      p.scores.push_back(1.0 / (1.0 + dist));
    }
    pairs.push_back(p);
  }
  io::write_pairs(root / "pair.txt", pairs);
}

namespace {

std::string spec_trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string num(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

std::string vec(const Vec3& v) { return num(v.x()) + " " + num(v.y()) + " " + num(v.z()); }

}  // namespace

SceneSpec parse_scene_spec(const std::string& text, const std::string& source, std::uint64_t seed) {
  SceneSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = spec_trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = spec_trim(line.substr(0, eq));
    std::istringstream val(line.substr(eq + 1));
    auto read = [&](double& x) {
      if (!(val >> x)) fail("bad number for '" + key + "'");
    };
    auto read_vec = [&](Vec3& v) {
      for (int k = 0; k < 3; ++k) read(v[k]);
    };
    auto finish = [&] {
      std::string extra;
      if (val >> extra) fail("unexpected '" + extra + "' after '" + key + "'");
    };
    double x = 0.0;
    if (key == "primitive") {
      std::string kind;
      val >> kind;
      Primitive p;
      std::mt19937_64 rng(nn::derive_seed(seed, "spec-texture/" + std::to_string(spec.primitives.size())));
      p.texture = random_texture(rng);
      if (kind == "plane") {
        p.kind = Primitive::Kind::Plane;
      } else if (kind == "sphere") {
        p.kind = Primitive::Kind::Sphere;
      } else {
        fail("primitive kind must be 'plane' or 'sphere', got '" + kind + "'");
      }
      bool has_center = false, has_size = p.kind == Primitive::Kind::Plane;
      std::string field;
      while (val >> field) {
        if (field == "center") {
          read_vec(p.center);
          has_center = true;
        } else if (field == "normal" && p.kind == Primitive::Kind::Plane) {
          read_vec(p.normal);
          if (p.normal.norm() == 0.0) fail("zero plane normal");
          p.normal.normalize();
        } else if (field == "radius" && p.kind == Primitive::Kind::Sphere) {
          read(p.radius);
          has_size = true;
        } else if (field == "half_extent" && p.kind == Primitive::Kind::Plane) {
          read(p.radius);
        } else if (field == "albedo") {
          read_vec(p.texture.albedo);
        } else if (field == "frequency") {
          read(p.texture.frequency);
        } else {
          fail("unknown primitive field '" + field + "'");
        }
      }
      if (!has_center) fail("primitive needs 'center X Y Z'");
      if (!has_size) fail("sphere needs 'radius R'");
      spec.primitives.push_back(p);
      continue;
    }
    if (key == "light") {
      read_vec(spec.light);
    } else {
      read(x);
      if (key == "height" || key == "width" || key == "views") {
        if (x != std::floor(x)) fail("'" + key + "' must be an integer");
        (key == "height" ? spec.height : key == "width" ? spec.width : spec.views) = static_cast<int>(x);
      } else if (key == "focal") {
        spec.focal = x;
      } else if (key == "depth_min") {
        spec.depth_min = x;
      } else if (key == "depth_max") {
        spec.depth_max = x;
      } else if (key == "look_at_depth") {
        spec.look_at_depth = x;
      } else if (key == "ring_step") {
        spec.ring_step = x;
      } else if (key == "jitter") {
        spec.jitter = x;
      } else if (key == "ambient") {
        spec.ambient = x;
      } else {
        fail("unknown scene key '" + key + "'");
      }
    }
    finish();
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
  return spec;
}

std::string format_scene_spec(const SceneSpec& spec) {
  std::string out;
  out += "height = " + std::to_string(spec.height) + "\n";
  out += "width = " + std::to_string(spec.width) + "\n";
  out += "views = " + std::to_string(spec.views) + "\n";
  out += "focal = " + num(spec.focal) + "\n";
  out += "depth_min = " + num(spec.depth_min) + "\n";
  out += "depth_max = " + num(spec.depth_max) + "\n";
  out += "look_at_depth = " + num(spec.look_at_depth) + "\n";
  out += "ring_step = " + num(spec.ring_step) + "\n";
  out += "jitter = " + num(spec.jitter) + "\n";
  out += "light = " + vec(spec.light) + "\n";
  out += "ambient = " + num(spec.ambient) + "\n";
  for (const Primitive& p : spec.primitives) {
    if (p.kind == Primitive::Kind::Plane) {
      out += "primitive = plane center " + vec(p.center) + " normal " + vec(p.normal) +
             " half_extent " + num(p.radius);
    } else {
      out += "primitive = sphere center " + vec(p.center) + " radius " + num(p.radius);
    }
    out += " albedo " + vec(p.texture.albedo) + " frequency " + num(p.texture.frequency) + "\n";
  }
  return out;
}

}  // namespace atv::synthetic
