#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iris/grid.hpp"

namespace iris {

/// Raised for any malformed IVOL container (bad header, truncated payload, bad dims).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scalar 3D image. Voxels are stored depth-major (z, then y, then x).
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, Spacing spacing, std::vector<double> voxels);
  Volume(Dims dims, Spacing spacing, double fill = 0.0);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return voxels_.size(); }

  std::span<const double> voxels() const { return voxels_; }
  std::span<double> voxels() { return voxels_; }
  double operator[](std::size_t i) const { return voxels_[i]; }
  double& operator[](std::size_t i) { return voxels_[i]; }
  double at(const Index3& p) const { return voxels_[flat_index(dims_, p)]; }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<double> voxels_;
};

/// Binary label grid; every value is 0 or 1.
class Mask {
 public:
  Mask() = default;
  Mask(Dims dims, std::vector<std::uint8_t> labels);
  explicit Mask(Dims dims, std::uint8_t fill = 0);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t count() const;

  std::span<const std::uint8_t> labels() const { return labels_; }
  std::uint8_t operator[](std::size_t i) const { return labels_[i]; }
  void set(std::size_t i, bool on) { labels_[i] = on ? 1 : 0; }

  bool operator==(const Mask&) const = default;

 private:
  Dims dims_;
  std::vector<std::uint8_t> labels_;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  Dims dims{1, 64, 64};
  Spacing spacing{};
  int blob_min = 1;
  int blob_max = 4;
  double contrast = 1.0;
  double noise_stdev = 0.35;
};

// IVOL container ---------------------------------------------------------------

enum class DType { F32, U8 };

std::string encode_ivol(const Volume& v);
std::string encode_ivol(const Mask& m, const Spacing& spacing = {});

/// Decodes either dtype into a Volume (u8 values become 0.0/1.0 etc.).
Volume decode_volume(std::string_view bytes);
/// Decodes a u8 payload into a Mask; rejects non-binary values and f32 payloads.
std::pair<Mask, Spacing> decode_mask(std::string_view bytes);

void save_volume(const std::filesystem::path& path, const Volume& v);
void save_mask(const std::filesystem::path& path, const Mask& m, const Spacing& spacing = {});
Volume load_volume(const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

// Processing -------------------------------------------------------------------

/// Zero mean, unit population stdev. Constant input maps to all zeros.
Volume normalize(const Volume& v);

std::pair<Volume, Mask> generate_synthetic(const SynthSpec& spec);

/// Per-axis flips and rotation angles (radians about the z, y, x axes).
struct AugmentParams {
  bool flip[3] = {false, false, false};
  double angle[3] = {0.0, 0.0, 0.0};
};

/// Draws flips with p = 0.5 and angles in [-pi/8, pi/8]. Axes that cannot rotate on a
/// flat grid (rotation would leave the plane) get angle 0.
AugmentParams draw_augment_params(const Dims& dims, std::uint64_t seed);

std::pair<Volume, Mask> augment(const Volume& v, const Mask& m, const AugmentParams& params);
std::pair<Volume, Mask> augment(const Volume& v, const Mask& m, std::uint64_t seed);

/// p > 0.5 thresholding used everywhere a probability grid becomes a prediction.
Mask threshold(std::span<const double> prob, const Dims& dims);

}  // namespace iris
