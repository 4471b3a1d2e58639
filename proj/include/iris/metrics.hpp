#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "iris/volume.hpp"

namespace iris {

class UndefinedSurfaceDistance : public std::domain_error {
 public:
  UndefinedSurfaceDistance() : std::domain_error("undefined surface distance: empty mask") {}
};

/// 2|A∩B| / (|A| + |B|); 1.0 when both are empty.
double dsc(const Mask& a, const Mask& b);

struct SurfaceDistances {
  double assd = 0.0;  // voxel units
  double hd95 = 0.0;  // mm
};

/// Foreground voxels with a background 6-neighbour; the grid border counts as background.
std::vector<std::size_t> surface_voxels(const Mask& m);

/// Throws UndefinedSurfaceDistance when either mask is empty.
SurfaceDistances surface_distances(const Mask& a, const Mask& b, const Spacing& spacing);

/// Linear-interpolated percentile (q in [0,100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

struct MetricReport {
  double dsc = 0.0;
  std::optional<double> assd;  // absent when a mask is empty
  std::optional<double> hd95;
};

MetricReport evaluate_masks(const Mask& pred, const Mask& gt, const Spacing& spacing);

}  // namespace iris
