#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "iris/distfield.hpp"
#include "iris/supervoxel.hpp"
#include "iris/volume.hpp"

namespace iris {

enum class Polarity { Object, Background };

struct Click {
  Index3 position;
  Polarity polarity = Polarity::Object;
  bool operator==(const Click&) const = default;
};

/// Wire format {"pos":[z,y,x],"polarity":"object"|"background"}.
nlohmann::json click_to_json(const Click& c);
Click click_from_json(const nlohmann::json& j);

/// Accumulated object / background hint voxels. The two sets stay disjoint.
struct HintSet {
  std::set<std::size_t> object_hints;
  std::set<std::size_t> background_hints;

  bool empty() const { return object_hints.empty() && background_hints.empty(); }
  bool operator==(const HintSet&) const = default;
};

struct RobotConfig {
  int clicks_per_iteration = 6;
  int noise_range = 0;
  std::uint64_t seed = 0;
};

/// How a click turns into hint voxels.
enum class ClickMode { Supervoxel, Point };

struct InteractionMapPair {
  DistanceField h_plus;
  DistanceField h_minus;
};

/// Robot user: one click at the centre of each of the N_c most mis-segmented supervoxels.
std::vector<Click> simulate_clicks(const Mask& pred, const Mask& gt, const SupervoxelLabeling& labeling,
                                   const RobotConfig& cfg);

struct ExpandResult {
  HintSet hints;
  std::size_t object_added = 0;
  std::size_t background_added = 0;
};

/// Adds the clicked regions to the hint set of matching polarity; first hint wins on conflicts.
ExpandResult expand_clicks(const std::vector<Click>& clicks, const SupervoxelLabeling& labeling, const HintSet& hints,
                           ClickMode mode = ClickMode::Supervoxel);

/// Distance maps of both hint sets, each scaled to [0,1] by its maximum.
InteractionMapPair build_maps(const Volume& v, const HintSet& hints, const DistanceKind& kind);

}  // namespace iris
