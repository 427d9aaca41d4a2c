#include "atv/geometry.hpp"

#include <Eigen/LU>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace atv::geometry {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Clamped-corner bilinear setup along one axis. Returns false if `x` is
// outside [0, n-1].
bool axis_taps(double x, int n, int& i0, double& f) {
  if (!std::isfinite(x) || x < 0.0 || x > n - 1) return false;
  if (n == 1) {
    i0 = 0;
    f = 0.0;
    return true;
  }
  i0 = std::min(static_cast<int>(std::floor(x)), n - 2);
  f = x - i0;
  return true;
}

}  // namespace

void Camera::validate() const {
  const double tol = 1e-6;
  if (!K.allFinite() || !R.allFinite() || !t.allFinite()) {
    throw std::invalid_argument("camera has non-finite entries");
  }
  if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
      std::abs(R.determinant() - 1.0) > tol) {
    throw std::invalid_argument("camera rotation is not orthonormal with det +1");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(0, 0) <= 0.0 || K(1, 1) <= 0.0 ||
      K(2, 2) <= 0.0) {
    throw std::invalid_argument("camera intrinsics must be upper-triangular with positive diagonal");
  }
  if (!(depth_min > 0.0 && depth_min < depth_max)) {
    throw std::invalid_argument("camera depth range must satisfy 0 < depth_min < depth_max");
  }
}

Vec3 Camera::back_project(const Vec2& x, double depth) const {
  const Vec3 ray = K.inverse() * Vec3(x.x(), x.y(), 1.0);
  return to_world(ray * (depth / ray.z()));
}

Camera scale_camera(const Camera& cam, int scale) {
  if (scale < 0) throw std::invalid_argument("scale_camera: negative scale");
  Camera out = cam;
  const double f = 1.0 / static_cast<double>(1 << scale);
  out.K.row(0) *= f;
  out.K.row(1) *= f;
  return out;
}

void relative_pose(const Camera& ref, const Camera& src, Mat3& R_rel, Vec3& t_rel) {
  R_rel = src.R * ref.R.transpose();
  t_rel = src.t - R_rel * ref.t;
}

Mat3 plane_homography(const Camera& ref, const Camera& src, double depth) {
  if (!(depth > 0.0)) throw std::invalid_argument("plane_homography: depth must be positive");
  if (std::abs(ref.K.determinant()) < 1e-12 || std::abs(src.K.determinant()) < 1e-12) {
    throw std::invalid_argument("plane_homography: singular intrinsics");
  }
  Mat3 R_rel;
  Vec3 t_rel;
  relative_pose(ref, src, R_rel, t_rel);
  // Points on z = depth satisfy n^T X / depth = 1 with n = (0, 0, 1).
  const Vec3 n(0.0, 0.0, 1.0);
  return src.K * (R_rel + t_rel * n.transpose() / depth) * ref.K.inverse();
}

ProjectedPixel project_pixel(const Camera& ref, const Camera& src, const Vec2& x, double depth,
                             ImageSize src_size) {
  if (!(depth > 0.0)) throw std::invalid_argument("project_pixel: depth must be positive");
  const Vec3 world = ref.back_project(x, depth);
  const Vec3 cam = src.to_camera(world);
  ProjectedPixel out;
  out.src_depth = cam.z();
  out.in_front = cam.z() > 0.0;
  const Vec3 p = src.K * cam;
  out.uv = Vec2(p.x() / p.z(), p.y() / p.z());
  out.in_bounds = out.in_front && out.uv.x() >= 0.0 && out.uv.x() <= src_size.width - 1 &&
                  out.uv.y() >= 0.0 && out.uv.y() <= src_size.height - 1;
  return out;
}

void DepthHypothesisField::validate_increasing() const {
  const int D = count();
  const std::size_t plane = static_cast<std::size_t>(height()) * width();
  for (std::size_t p = 0; p < plane; ++p) {
    for (int d = 1; d < D; ++d) {
      if (!(values[d * plane + p] > values[(d - 1) * plane + p])) {
        throw std::invalid_argument("depth hypotheses are not strictly increasing");
      }
    }
  }
}

DepthHypothesisField sample_uniform_depths(double depth_min, double depth_max, int count,
                                           ImageSize shape, int scale) {
  if (count < 2) throw std::invalid_argument("sample_uniform_depths: need at least 2 hypotheses");
  if (!(depth_min < depth_max)) {
    throw std::invalid_argument("sample_uniform_depths: depth_min must be below depth_max");
  }
  DepthHypothesisField field;
  field.scale = scale;
  field.values = Tensor({count, shape.height, shape.width});
  const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
  for (int d = 0; d < count; ++d) {
    // Symmetric interpolation keeps the endpoints exact and the set mirror-symmetric.
    const double a = static_cast<double>(count - 1 - d) / (count - 1);
    const double b = static_cast<double>(d) / (count - 1);
    const double v = d == 0 ? depth_min : d == count - 1 ? depth_max : a * depth_min + b * depth_max;
    std::fill(field.values.data() + d * plane, field.values.data() + (d + 1) * plane, v);
  }
  return field;
}

SamplingGrid SamplingGrid::from_coordinates(int depth, int height, int width,
                                            const std::vector<double>& xs,
                                            const std::vector<double>& ys, ImageSize src) {
  SamplingGrid g;
  g.depth = depth;
  g.height = height;
  g.width = width;
  g.src_height = src.height;
  g.src_width = src.width;
  const std::size_t n = static_cast<std::size_t>(depth) * height * width;
  g.x0.assign(n, 0);
  g.y0.assign(n, 0);
  g.fx.assign(n, 0.0);
  g.fy.assign(n, 0.0);
  g.valid = Mask({depth, height, width});
  for (std::size_t i = 0; i < n; ++i) {
    int ix, iy;
    double fx, fy;
    if (axis_taps(xs[i], src.width, ix, fx) && axis_taps(ys[i], src.height, iy, fy)) {
      g.x0[i] = ix;
      g.y0[i] = iy;
      g.fx[i] = fx;
      g.fy[i] = fy;
      g.valid.bits[i] = 1;
    }
  }
  return g;
}

double SamplingGrid::sample(const double* plane, std::size_t i) const {
  if (!valid.bits[i]) return 0.0;
  const int x = x0[i], y = y0[i];
  const int x1 = src_width > 1 ? x + 1 : x;
  const int y1 = src_height > 1 ? y + 1 : y;
  const double ax = fx[i], ay = fy[i];
  const double* r0 = plane + static_cast<std::size_t>(y) * src_width;
  const double* r1 = plane + static_cast<std::size_t>(y1) * src_width;
  return (1 - ay) * ((1 - ax) * r0[x] + ax * r0[x1]) + ay * ((1 - ax) * r1[x] + ax * r1[x1]);
}

SamplingGrid homography_grid(const Mat3& H, ImageSize ref, ImageSize src) {
  return homography_grid(std::vector<Mat3>{H}, ref, src);
}

SamplingGrid homography_grid(const std::vector<Mat3>& Hs, ImageSize ref, ImageSize src) {
  const int D = static_cast<int>(Hs.size());
  const std::size_t plane = static_cast<std::size_t>(ref.height) * ref.width;
  std::vector<double> xs(D * plane), ys(D * plane);
  for (int d = 0; d < D; ++d) {
    const Mat3& H = Hs[d];
    for (int y = 0; y < ref.height; ++y) {
      for (int x = 0; x < ref.width; ++x) {
        const Vec3 p = H * Vec3(x, y, 1.0);
        const std::size_t i = d * plane + static_cast<std::size_t>(y) * ref.width + x;
        if (p.z() > 0.0) {
          xs[i] = p.x() / p.z();
          ys[i] = p.y() / p.z();
        } else {
          xs[i] = ys[i] = kNaN;
        }
      }
    }
  }
  return SamplingGrid::from_coordinates(D, ref.height, ref.width, xs, ys, src);
}

SamplingGrid depth_field_grid(const Camera& ref, const Camera& src,
                              const DepthHypothesisField& depths, ImageSize src_size) {
  const int D = depths.count(), H = depths.height(), W = depths.width();
  Mat3 R_rel;
  Vec3 t_rel;
  relative_pose(ref, src, R_rel, t_rel);
  const Mat3 Kinv = ref.K.inverse();
  const Mat3 M = src.K * R_rel;
  const Vec3 m = src.K * t_rel;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> xs(D * plane), ys(D * plane);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      Vec3 r = Kinv * Vec3(x, y, 1.0);
      r /= r.z();
      const Vec3 ray = M * r;
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      for (int d = 0; d < D; ++d) {
        const double z = depths.values[d * plane + p];
        const Vec3 q = ray * z + m;
        const std::size_t i = d * plane + p;
        if (q.z() > 0.0) {
          xs[i] = q.x() / q.z();
          ys[i] = q.y() / q.z();
        } else {
          xs[i] = ys[i] = kNaN;
        }
      }
    }
  }
  return SamplingGrid::from_coordinates(D, H, W, xs, ys, src_size);
}

WarpStack warp_with_grid(const Tensor& F_src, const SamplingGrid& grid) {
  const int C = F_src.dim(0);
  if (F_src.dim(1) != grid.src_height || F_src.dim(2) != grid.src_width) {
    throw ShapeError("warp: source map does not match sampling grid");
  }
  const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
  const std::size_t src_plane = static_cast<std::size_t>(grid.src_height) * grid.src_width;
  WarpStack out;
  out.warped = Tensor({grid.depth, C, grid.height, grid.width});
  out.valid = grid.valid;
  for (int d = 0; d < grid.depth; ++d) {
    for (int c = 0; c < C; ++c) {
      const double* src = F_src.data() + c * src_plane;
      double* dst = out.warped.data() + (static_cast<std::size_t>(d) * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = grid.sample(src, d * plane + p);
    }
  }
  return out;
}

WarpResult warp_by_homography(const Tensor& F_src, const Mat3& H) {
  if (std::abs(H.determinant()) < 1e-15) {
    throw std::invalid_argument("warp_by_homography: homography is singular");
  }
  const ImageSize size{F_src.dim(1), F_src.dim(2)};
  WarpStack stack = warp_with_grid(F_src, homography_grid(H, size, size));
  WarpResult out;
  out.warped = stack.warped.reshaped({F_src.dim(0), size.height, size.width});
  out.valid = stack.valid;
  out.valid.shape = {size.height, size.width};
  return out;
}

WarpStack warp_by_depth_field(const Tensor& F_src, const Camera& ref, const Camera& src,
                              const DepthHypothesisField& depths) {
  const ImageSize size{F_src.dim(1), F_src.dim(2)};
  if (depths.height() != size.height || depths.width() != size.width) {
    throw ShapeError("warp_by_depth_field: depth field resolution does not match feature map");
  }
  return warp_with_grid(F_src, depth_field_grid(ref, src, depths, size));
}

Var sample_map(const Var& F_src, const SamplingGrid& grid) {
  if (grid.depth != 1) throw ShapeError("sample_map: expects a single-slice grid");
  const Tensor& fv = F_src.value();
  const int C = fv.dim(0);
  WarpStack stack = warp_with_grid(fv, grid);
  Tensor out = stack.warped.reshaped({C, grid.height, grid.width});
  auto g = std::make_shared<SamplingGrid>(grid);
  return make_node(std::move(out), {F_src}, [g, C](Node& self) {
    Tensor& dF = self.inputs[0]->grad_buffer();
    const std::size_t plane = static_cast<std::size_t>(g->height) * g->width;
    const std::size_t src_plane = static_cast<std::size_t>(g->src_height) * g->src_width;
    for (std::size_t p = 0; p < plane; ++p) {
      if (!g->valid.bits[p]) continue;
      const int x = g->x0[p], y = g->y0[p];
      const int x1 = g->src_width > 1 ? x + 1 : x;
      const int y1 = g->src_height > 1 ? y + 1 : y;
      const double ax = g->fx[p], ay = g->fy[p];
      const std::size_t i00 = static_cast<std::size_t>(y) * g->src_width + x;
      const std::size_t i01 = static_cast<std::size_t>(y) * g->src_width + x1;
      const std::size_t i10 = static_cast<std::size_t>(y1) * g->src_width + x;
      const std::size_t i11 = static_cast<std::size_t>(y1) * g->src_width + x1;
      for (int c = 0; c < C; ++c) {
        const double up = self.grad[c * plane + p];
        double* d = dF.data() + c * src_plane;
        d[i00] += up * (1 - ax) * (1 - ay);
        d[i01] += up * ax * (1 - ay);
        d[i10] += up * (1 - ax) * ay;
        d[i11] += up * ax * ay;
      }
    }
  });
}

CameraParseError::CameraParseError(const std::string& file, int line, const std::string& msg)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + msg), file_(file), line_(line) {}

namespace {

std::vector<double> parse_numbers(const std::string& line, const std::string& source, int lineno) {
  std::vector<double> out;
  const char* p = line.data();
  const char* end = line.data() + line.size();
  while (p < end) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p == end) break;
    double v;
    auto res = std::from_chars(p, end, v);
    if (res.ec != std::errc()) {
      throw CameraParseError(source, lineno, "expected a number, got '" + line + "'");
    }
    out.push_back(v);
    p = res.ptr;
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

CameraFile parse_camera(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  enum class Section { None, Extrinsic, Intrinsic, Depth } section = Section::None;
  std::vector<std::vector<double>> ext, intr;
  std::vector<double> depth_line;
  int last_line = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    last_line = lineno;
    if (t == "extrinsic") {
      section = Section::Extrinsic;
      continue;
    }
    if (t == "intrinsic") {
      section = Section::Intrinsic;
      continue;
    }
    std::vector<double> nums = parse_numbers(t, source, lineno);
    if (section == Section::Intrinsic && intr.size() == 3) section = Section::Depth;
    switch (section) {
      case Section::Extrinsic:
        if (nums.size() != 4) throw CameraParseError(source, lineno, "extrinsic rows need 4 values");
        ext.push_back(nums);
        if (ext.size() > 4) throw CameraParseError(source, lineno, "too many extrinsic rows");
        break;
      case Section::Intrinsic:
        if (nums.size() != 3) throw CameraParseError(source, lineno, "intrinsic rows need 3 values");
        intr.push_back(nums);
        break;
      case Section::Depth:
        if (!depth_line.empty()) throw CameraParseError(source, lineno, "unexpected trailing data");
        if (nums.size() != 2 && nums.size() != 4) {
          throw CameraParseError(source, lineno,
                                 "depth line needs 'depth_min depth_interval [depth_count depth_max]'");
        }
        depth_line = nums;
        break;
      case Section::None:
        throw CameraParseError(source, lineno, "expected 'extrinsic' header");
    }
  }
  if (ext.size() != 4) throw CameraParseError(source, last_line, "incomplete extrinsic block");
  if (intr.size() != 3) throw CameraParseError(source, last_line, "incomplete intrinsic block");
  if (depth_line.empty()) throw CameraParseError(source, last_line, "missing depth range line");

  CameraFile out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      out.camera.R(r, c) = ext[r][c];
      out.camera.K(r, c) = intr[r][c];
    }
    out.camera.t(r) = ext[r][3];
  }
  out.camera.depth_min = depth_line[0];
  out.depth_interval = depth_line[1];
  if (depth_line.size() == 4) {
    out.depth_count = static_cast<int>(std::lround(depth_line[2]));
    out.camera.depth_max = depth_line[3];
  } else {
    out.depth_count = 192;
    out.camera.depth_max = depth_line[0] + depth_line[1] * (out.depth_count - 1);
  }
  try {
    out.camera.validate();
  } catch (const std::invalid_argument& e) {
    throw CameraParseError(source, last_line, e.what());
  }
  return out;
}

CameraFile read_camera_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CameraParseError(path.string(), 0, "cannot open camera file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_camera(ss.str(), path.string());
}

std::string format_camera(const CameraFile& cam) {
  std::ostringstream os;
  const Camera& c = cam.camera;
  os << "extrinsic\n";
  for (int r = 0; r < 3; ++r) {
    os << fmt(c.R(r, 0)) << ' ' << fmt(c.R(r, 1)) << ' ' << fmt(c.R(r, 2)) << ' ' << fmt(c.t(r))
       << '\n';
  }
  os << "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) {
    os << fmt(c.K(r, 0)) << ' ' << fmt(c.K(r, 1)) << ' ' << fmt(c.K(r, 2)) << '\n';
  }
  os << '\n'
     << fmt(c.depth_min) << ' ' << fmt(cam.depth_interval) << ' ' << cam.depth_count << ' '
     << fmt(c.depth_max) << '\n';
  return os.str();
}

void write_camera_file(const std::filesystem::path& path, const CameraFile& cam) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write camera file " + path.string());
  out << format_camera(cam);
}

}  // namespace atv::geometry
