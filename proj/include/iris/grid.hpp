#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace iris {

/// Grid extent in (depth, height, width) order.
struct Dims {
  int depth = 1;
  int height = 1;
  int width = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(depth) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  bool valid() const { return depth > 0 && height > 0 && width > 0; }
  int extent(int axis) const { return axis == 0 ? depth : axis == 1 ? height : width; }
  bool operator==(const Dims&) const = default;
};

/// Physical voxel size in mm, (z, y, x) order.
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  double axis(int a) const { return a == 0 ? z : a == 1 ? y : x; }
  bool valid() const { return z > 0.0 && y > 0.0 && x > 0.0; }
  bool operator==(const Spacing&) const = default;
};

struct Index3 {
  int z = 0;
  int y = 0;
  int x = 0;
  bool operator==(const Index3&) const = default;
};

inline bool in_grid(const Dims& d, const Index3& p) {
  return p.z >= 0 && p.z < d.depth && p.y >= 0 && p.y < d.height && p.x >= 0 && p.x < d.width;
}

inline std::size_t flat_index(const Dims& d, const Index3& p) {
  return (static_cast<std::size_t>(p.z) * d.height + p.y) * d.width + p.x;
}

inline Index3 unflatten(const Dims& d, std::size_t i) {
  const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
  Index3 p;
  p.z = static_cast<int>(i / plane);
  const std::size_t r = i % plane;
  p.y = static_cast<int>(r / d.width);
  p.x = static_cast<int>(r % d.width);
  return p;
}

inline std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.depth) + "," + std::to_string(d.height) + "," +
         std::to_string(d.width) + ")";
}

/// Offsets of the 26-neighbourhood restricted to the axes the grid actually spans.
inline std::vector<Index3> neighbor_offsets26(const Dims& d) {
  std::vector<Index3> out;
  const int rz = d.depth > 1 ? 1 : 0;
  const int ry = d.height > 1 ? 1 : 0;
  const int rx = d.width > 1 ? 1 : 0;
  for (int dz = -rz; dz <= rz; ++dz)
    for (int dy = -ry; dy <= ry; ++dy)
      for (int dx = -rx; dx <= rx; ++dx)
        if (dz != 0 || dy != 0 || dx != 0) out.push_back({dz, dy, dx});
  return out;
}

inline const std::array<Index3, 6>& face_offsets() {
  static const std::array<Index3, 6> k{{{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
  return k;
}

}  // namespace iris
