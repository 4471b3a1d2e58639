#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "iris/grid.hpp"
#include "iris/volume.hpp"

namespace iris {

struct SlicConfig {
  double spacing_scale[3] = {2.0, 2.0, 2.0};
  double compactness = 0.1;
  int iterations = 10;

  bool operator==(const SlicConfig&) const = default;
};

/// Partition of the grid into 26-connected regions labelled 0..region_count-1.
struct SupervoxelLabeling {
  Dims dims;
  std::vector<std::int32_t> labels;
  int region_count = 0;

  std::int32_t label_at(std::size_t voxel) const { return labels[voxel]; }
};

/// SLIC in joint (scaled position, intensity) space followed by connectivity enforcement.
SupervoxelLabeling slic(const Volume& v, int region_count, const SlicConfig& cfg = {});

/// ceil(100 * 0.45^iteration).
int schedule_region_count(int iteration);

std::vector<std::size_t> region_of(const SupervoxelLabeling& labeling, std::size_t voxel);

/// Members of every region, indexed by label, each list sorted ascending.
std::vector<std::vector<std::size_t>> region_members(const SupervoxelLabeling& labeling);

/// Per-axis seed counts whose product is the largest value <= region_count reachable by
/// repeatedly refining the coarsest axis.
std::array<int, 3> seed_grid(const Dims& dims, int region_count);

/// Labeling where every voxel is its own region.
SupervoxelLabeling identity_labeling(const Dims& dims);

}  // namespace iris
