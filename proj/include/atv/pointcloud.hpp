#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "atv/geometry.hpp"

namespace atv {

struct PointCloud {
  std::vector<geometry::Vec3> points;
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::vector<int> source_view;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  /// Throws std::invalid_argument on non-finite points or ragged arrays.
  void validate() const;
};

/// Binary little-endian PLY: x, y, z float32 and red, green, blue uint8.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
/// Reads ASCII or binary little-endian vertex data (float or double
/// coordinates, optional uchar colors). Source views are set to -1.
PointCloud read_ply(const std::filesystem::path& path);

}  // namespace atv
