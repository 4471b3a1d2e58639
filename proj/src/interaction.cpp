#include "iris/interaction.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace iris {

nlohmann::json click_to_json(const Click& c) {
  return {{"pos", {c.position.z, c.position.y, c.position.x}},
          {"polarity", c.polarity == Polarity::Object ? "object" : "background"}};
}

Click click_from_json(const nlohmann::json& j) {
  const auto& pos = j.at("pos");
  if (!pos.is_array() || pos.size() != 3) throw std::invalid_argument("click pos must be [z,y,x]");
  Click c;
  c.position = {pos[0].get<int>(), pos[1].get<int>(), pos[2].get<int>()};
  const auto pol = j.at("polarity").get<std::string>();
  if (pol == "object")
    c.polarity = Polarity::Object;
  else if (pol == "background")
    c.polarity = Polarity::Background;
  else
    throw std::invalid_argument("unknown click polarity " + pol);
  return c;
}

std::vector<Click> simulate_clicks(const Mask& pred, const Mask& gt, const SupervoxelLabeling& labeling,
                                   const RobotConfig& cfg) {
  if (!(pred.dims() == gt.dims()) || !(pred.dims() == labeling.dims))
    throw std::invalid_argument("simulate_clicks: dims mismatch");
  const Dims& dims = gt.dims();
  const int regions = labeling.region_count;

  struct Stats {
    std::size_t fn = 0, fp = 0;
    double centroid[3] = {0, 0, 0};
    std::size_t members = 0;
  };
  std::vector<Stats> stats(regions);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    Stats& s = stats[labeling.labels[i]];
    const Index3 p = unflatten(dims, i);
    s.centroid[0] += p.z;
    s.centroid[1] += p.y;
    s.centroid[2] += p.x;
    ++s.members;
    if (pred[i] != gt[i]) (gt[i] ? s.fn : s.fp) += 1;
  }

  std::vector<int> order(regions);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return stats[a].fn + stats[a].fp > stats[b].fn + stats[b].fp;
  });

  std::vector<int> chosen;
  for (int r : order) {
    if (static_cast<int>(chosen.size()) >= cfg.clicks_per_iteration) break;
    if (stats[r].fn + stats[r].fp == 0) break;
    chosen.push_back(r);
  }
  if (chosen.empty()) return {};

  std::vector<std::size_t> nearest(regions, 0);
  std::vector<double> nearest_d(regions, std::numeric_limits<double>::infinity());
  for (auto& s : stats)
    for (double& c : s.centroid) c /= static_cast<double>(std::max<std::size_t>(s.members, 1));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int r = labeling.labels[i];
    const Index3 p = unflatten(dims, i);
    const double dz = p.z - stats[r].centroid[0];
    const double dy = p.y - stats[r].centroid[1];
    const double dx = p.x - stats[r].centroid[2];
    const double d = dz * dz + dy * dy + dx * dx;
    if (d < nearest_d[r]) {
      nearest_d[r] = d;
      nearest[r] = i;
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> jitter(-cfg.noise_range, cfg.noise_range);
  std::vector<Click> clicks;
  for (int r : chosen) {
    Click c;
    c.polarity = stats[r].fn >= stats[r].fp ? Polarity::Object : Polarity::Background;
    Index3 p = unflatten(dims, nearest[r]);
    if (cfg.noise_range > 0) {
      p.z = std::clamp(p.z + jitter(rng), 0, dims.depth - 1);
      p.y = std::clamp(p.y + jitter(rng), 0, dims.height - 1);
      p.x = std::clamp(p.x + jitter(rng), 0, dims.width - 1);
    }
    c.position = p;
    clicks.push_back(c);
  }
  return clicks;
}

ExpandResult expand_clicks(const std::vector<Click>& clicks, const SupervoxelLabeling& labeling, const HintSet& hints,
                           ClickMode mode) {
  ExpandResult out{hints, 0, 0};
  if (clicks.empty()) return out;
  std::vector<std::vector<std::size_t>> members;
  if (mode == ClickMode::Supervoxel) members = region_members(labeling);

  for (const Click& c : clicks) {
    if (!in_grid(labeling.dims, c.position)) throw std::out_of_range("click outside grid");
    const std::size_t voxel = flat_index(labeling.dims, c.position);
    auto& same = c.polarity == Polarity::Object ? out.hints.object_hints : out.hints.background_hints;
    auto& other = c.polarity == Polarity::Object ? out.hints.background_hints : out.hints.object_hints;
    std::size_t& added = c.polarity == Polarity::Object ? out.object_added : out.background_added;
    auto add = [&](std::size_t i) {
      if (other.count(i)) return;
      if (same.insert(i).second) ++added;
    };
    if (mode == ClickMode::Point) {
      add(voxel);
    } else {
      for (auto i : members[labeling.labels[voxel]]) add(i);
    }
  }
  return out;
}

namespace {

DistanceField normalized_map(const Volume& v, const std::set<std::size_t>& seeds, const DistanceKind& kind) {
  const std::vector<std::size_t> list(seeds.begin(), seeds.end());
  DistanceField f = distance_transform(v, list, kind);
  const double m = f.max();
  if (m > 0.0)
    for (double& x : f.values) x /= m;
  return f;
}

}  // namespace

InteractionMapPair build_maps(const Volume& v, const HintSet& hints, const DistanceKind& kind) {
  return {normalized_map(v, hints.object_hints, kind), normalized_map(v, hints.background_hints, kind)};
}

}  // namespace iris
