#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "iris/grid.hpp"
#include "iris/volume.hpp"

namespace iris {

struct Geodesic {
  double spatial_regularizer = 1e-2;
};
struct Euclidean {};
struct Gaussian {
  double sigma = 5.0;
};

using DistanceKind = std::variant<Geodesic, Euclidean, Gaussian>;

/// Nonnegative per-voxel field; all-zero when the seed set is empty.
struct DistanceField {
  Dims dims;
  std::vector<double> values;

  double max() const;
};

struct GeodesicOptions {
  double tolerance = 1e-6;
  int max_sweep_pairs = 8;
};

/// Raster-scan geodesic distance with per-step cost
/// sqrt(reg^2 * |a-b|^2 + (I(a) - I(b))^2) over the 26-neighbourhood.
DistanceField geodesic_transform(const Volume& v, std::span<const std::size_t> seeds,
                                 double spatial_regularizer, const GeodesicOptions& opts = {});

/// Exact spacing-scaled Euclidean distance to the nearest seed (separable lower-envelope EDT).
DistanceField euclidean_transform(const Dims& dims, const Spacing& spacing, std::span<const std::size_t> seeds);

/// 1 - max_seed exp(-d^2 / (2 sigma^2)).
DistanceField gaussian_transform(const Dims& dims, const Spacing& spacing, std::span<const std::size_t> seeds,
                                 double sigma);

DistanceField distance_transform(const Volume& v, std::span<const std::size_t> seeds, const DistanceKind& kind);

/// Squared exact EDT to the set of voxels where `is_seed` is true; infinity when the set is empty.
std::vector<double> squared_edt(const Dims& dims, const Spacing& spacing, std::span<const std::uint8_t> is_seed);

}  // namespace iris
