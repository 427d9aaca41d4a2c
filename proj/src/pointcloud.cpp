#include "atv/pointcloud.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "atv/io.hpp"

namespace atv {

void PointCloud::validate() const {
  if (colors.size() != points.size() || source_view.size() != points.size()) {
    throw std::invalid_argument("point cloud: points, colors and source views differ in length");
  }
  for (const auto& p : points) {
    if (!p.allFinite()) throw std::invalid_argument("point cloud: non-finite coordinate");
  }
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  cloud.validate();
  std::string out =
      "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(cloud.size()) +
      "\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const float f = static_cast<float>(cloud.points[i][k]);
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.append(buf, 4);
    }
    for (int k = 0; k < 3; ++k) out.push_back(static_cast<char>(cloud.colors[i][k]));
  }
  io::write_text(path, out);
}

namespace {

struct Property {
  std::string type, name;
};

int type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

double read_binary_value(const char* p, const std::string& t) {
  auto get = [p](auto v) {
    std::memcpy(&v, p, sizeof(v));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return get(std::int8_t{});
  if (t == "uchar" || t == "uint8") return get(std::uint8_t{});
  if (t == "short" || t == "int16") return get(std::int16_t{});
  if (t == "ushort" || t == "uint16") return get(std::uint16_t{});
  if (t == "int" || t == "int32") return get(std::int32_t{});
  if (t == "uint" || t == "uint32") return get(std::uint32_t{});
  if (t == "float" || t == "float32") return get(float{});
  return get(double{});
}

}  // namespace

PointCloud read_ply(const std::filesystem::path& path) {
  const std::string bytes = io::read_text(path);
  const std::string src = path.string();
  const std::size_t end = bytes.find("end_header\n");
  if (bytes.rfind("ply", 0) != 0 || end == std::string::npos) {
    throw io::DataError(src + ": not a PLY file");
  }
  std::istringstream header(bytes.substr(0, end));
  std::string line, format;
  std::size_t count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<Property> props;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      ls >> format;
    } else if (word == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex" && !seen_vertex;
      if (in_vertex) {
        ls >> count;
        seen_vertex = true;
      } else if (!seen_vertex) {
        throw io::DataError(src + ": elements before the vertex element are not supported");
      }
    } else if (word == "property" && in_vertex) {
      Property p;
      ls >> p.type;
      if (p.type == "list") throw io::DataError(src + ": list properties on vertices are not supported");
      ls >> p.name;
      if (type_size(p.type) == 0) throw io::DataError(src + ": unknown property type " + p.type);
      props.push_back(p);
    }
  }
  if (!seen_vertex) throw io::DataError(src + ": no vertex element");
  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (int k = 0; k < static_cast<int>(props.size()); ++k) {
    const std::string& n = props[k].name;
    if (n == "x") ix = k;
    if (n == "y") iy = k;
    if (n == "z") iz = k;
    if (n == "red" || n == "r") ir = k;
    if (n == "green" || n == "g") ig = k;
    if (n == "blue" || n == "b") ib = k;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw io::DataError(src + ": vertices lack x, y, z");

  PointCloud cloud;
  std::vector<double> vals(props.size());
  const std::size_t body = end + std::strlen("end_header\n");
  std::istringstream ascii(format == "ascii" ? bytes.substr(body) : std::string());
  std::size_t stride = 0;
  for (const Property& p : props) stride += type_size(p.type);
  if (format == "binary_little_endian") {
    if (bytes.size() < body + count * stride) throw io::DataError(src + ": truncated vertex data");
  } else if (format != "ascii") {
    throw io::DataError(src + ": unsupported PLY format " + format);
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (format == "ascii") {
      for (double& v : vals)
        if (!(ascii >> v)) throw io::DataError(src + ": truncated vertex data");
    } else {
      const char* p = bytes.data() + body + i * stride;
      for (std::size_t k = 0; k < props.size(); ++k) {
        vals[k] = read_binary_value(p, props[k].type);
        p += type_size(props[k].type);
      }
    }
    cloud.points.emplace_back(vals[ix], vals[iy], vals[iz]);
    std::array<std::uint8_t, 3> c{255, 255, 255};
    if (ir >= 0 && ig >= 0 && ib >= 0) {
      c = {static_cast<std::uint8_t>(vals[ir]), static_cast<std::uint8_t>(vals[ig]),
           static_cast<std::uint8_t>(vals[ib])};
    }
    cloud.colors.push_back(c);
    cloud.source_view.push_back(-1);
  }
  return cloud;
}

}  // namespace atv
