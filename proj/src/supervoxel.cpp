#include "iris/supervoxel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace iris {

std::array<int, 3> seed_grid(const Dims& dims, int region_count) {
  std::array<int, 3> counts{1, 1, 1};
  long long product = 1;
  for (;;) {
    int best = -1;
    double best_ratio = 0.0;
    for (int a = 0; a < 3; ++a) {
      if (counts[a] >= dims.extent(a)) continue;
      if (product / counts[a] * (counts[a] + 1) > region_count) continue;
      const double ratio = static_cast<double>(dims.extent(a)) / counts[a];
      if (ratio >= best_ratio) {
        best_ratio = ratio;
        best = a;
      }
    }
    if (best < 0) break;
    product = product / counts[best] * (counts[best] + 1);
    ++counts[best];
  }
  return counts;
}

namespace {

struct Center {
  double pos[3];
  double intensity;
};

// Merge every non-largest connected piece of each label into its largest settled neighbour.
void enforce_connectivity(const Dims& dims, std::vector<std::int32_t>& labels, int max_label) {
  const std::size_t n = labels.size();
  const auto offsets = neighbor_offsets26(dims);
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::vector<std::size_t>> comps;
  std::vector<std::int32_t> comp_label;
  std::vector<std::size_t> stack;

  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const auto id = static_cast<std::int32_t>(comps.size());
    comps.emplace_back();
    comp_label.push_back(labels[s]);
    comp[s] = id;
    stack.assign(1, s);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      comps[id].push_back(i);
      const Index3 p = unflatten(dims, i);
      for (const Index3& o : offsets) {
        const Index3 q{p.z + o.z, p.y + o.y, p.x + o.x};
        if (!in_grid(dims, q)) continue;
        const std::size_t j = flat_index(dims, q);
        if (comp[j] < 0 && labels[j] == labels[s]) {
          comp[j] = id;
          stack.push_back(j);
        }
      }
    }
  }

  std::vector<std::int32_t> keeper(max_label, -1);
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const auto l = comp_label[c];
    if (keeper[l] < 0 || comps[c].size() > comps[keeper[l]].size()) keeper[l] = static_cast<std::int32_t>(c);
  }

  std::vector<std::uint8_t> settled(n, 0);
  std::vector<std::size_t> size(max_label, 0);
  std::vector<std::size_t> pending;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    if (keeper[comp_label[c]] == static_cast<std::int32_t>(c)) {
      for (auto i : comps[c]) settled[i] = 1;
      size[comp_label[c]] = comps[c].size();
    } else {
      pending.push_back(c);
    }
  }

  while (!pending.empty()) {
    std::vector<std::size_t> deferred;
    for (auto c : pending) {
      std::int32_t target = -1;
      for (auto i : comps[c]) {
        const Index3 p = unflatten(dims, i);
        for (const Index3& o : offsets) {
          const Index3 q{p.z + o.z, p.y + o.y, p.x + o.x};
          if (!in_grid(dims, q)) continue;
          const std::size_t j = flat_index(dims, q);
          if (!settled[j]) continue;
          const auto l = labels[j];
          if (target < 0 || size[l] > size[target] || (size[l] == size[target] && l < target)) target = l;
        }
      }
      if (target < 0) {
        deferred.push_back(c);
        continue;
      }
      for (auto i : comps[c]) {
        labels[i] = target;
        settled[i] = 1;
      }
      size[target] += comps[c].size();
    }
    if (deferred.size() == pending.size()) throw std::logic_error("connectivity enforcement stalled");
    pending = std::move(deferred);
  }
}

}  // namespace

SupervoxelLabeling slic(const Volume& v, int region_count, const SlicConfig& cfg) {
  const Dims& dims = v.dims();
  const std::size_t n = dims.count();
  if (region_count < 1 || static_cast<std::size_t>(region_count) > n)
    throw std::invalid_argument("region_count " + std::to_string(region_count) + " out of range [1, " +
                                std::to_string(n) + "]");
  if (!(cfg.compactness > 0.0)) throw std::invalid_argument("compactness must be > 0");
  if (cfg.iterations < 1) throw std::invalid_argument("slic iterations must be >= 1");

  const auto grid = seed_grid(dims, region_count);
  double step[3];
  int window[3];
  double interval = 0.0;
  int active = 0;
  for (int a = 0; a < 3; ++a) {
    step[a] = static_cast<double>(dims.extent(a)) / grid[a];
    window[a] = static_cast<int>(std::ceil(step[a]));
    if (dims.extent(a) > 1) {
      interval += step[a] * cfg.spacing_scale[a];
      ++active;
    }
  }
  interval = active > 0 ? interval / active : 1.0;
  const double spatial_w = (cfg.compactness / interval) * (cfg.compactness / interval);

  const auto img = v.voxels();
  auto position = [&](const Index3& p, int a) {
    const int idx = a == 0 ? p.z : a == 1 ? p.y : p.x;
    return idx * cfg.spacing_scale[a];
  };

  std::vector<Center> centers;
  for (int gz = 0; gz < grid[0]; ++gz)
    for (int gy = 0; gy < grid[1]; ++gy)
      for (int gx = 0; gx < grid[2]; ++gx) {
        const double c[3] = {(gz + 0.5) * step[0] - 0.5, (gy + 0.5) * step[1] - 0.5, (gx + 0.5) * step[2] - 0.5};
        Index3 nearest{static_cast<int>(std::lround(c[0])), static_cast<int>(std::lround(c[1])),
                       static_cast<int>(std::lround(c[2]))};
        nearest.z = std::clamp(nearest.z, 0, dims.depth - 1);
        nearest.y = std::clamp(nearest.y, 0, dims.height - 1);
        nearest.x = std::clamp(nearest.x, 0, dims.width - 1);
        Center ctr;
        for (int a = 0; a < 3; ++a) ctr.pos[a] = c[a] * cfg.spacing_scale[a];
        ctr.intensity = img[flat_index(dims, nearest)];
        centers.push_back(ctr);
      }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::int32_t> labels(n, -1);
  std::vector<double> best(n, inf);

  auto dist2 = [&](const Center& c, const Index3& p, double intensity) {
    double ds = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = position(p, a) - c.pos[a];
      ds += d * d;
    }
    const double di = intensity - c.intensity;
    return di * di + spatial_w * ds;
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    std::fill(best.begin(), best.end(), inf);
    std::fill(labels.begin(), labels.end(), -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      int lo[3], hi[3];
      for (int a = 0; a < 3; ++a) {
        const double ci = c.pos[a] / cfg.spacing_scale[a];
        lo[a] = std::max(0, static_cast<int>(std::floor(ci)) - window[a]);
        hi[a] = std::min(dims.extent(a) - 1, static_cast<int>(std::ceil(ci)) + window[a]);
      }
      for (int z = lo[0]; z <= hi[0]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
          for (int x = lo[2]; x <= hi[2]; ++x) {
            const Index3 p{z, y, x};
            const std::size_t i = flat_index(dims, p);
            const double d = dist2(c, p, img[i]);
            if (d < best[i]) {
              best[i] = d;
              labels[i] = static_cast<std::int32_t>(k);
            }
          }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] >= 0) continue;
      const Index3 p = unflatten(dims, i);
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = dist2(centers[k], p, img[i]);
        if (d < best[i]) {
          best[i] = d;
          labels[i] = static_cast<std::int32_t>(k);
        }
      }
    }
    std::vector<Center> acc(centers.size(), Center{{0, 0, 0}, 0});
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const Index3 p = unflatten(dims, i);
      Center& a = acc[labels[i]];
      for (int ax = 0; ax < 3; ++ax) a.pos[ax] += position(p, ax);
      a.intensity += img[i];
      ++count[labels[i]];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (count[k] == 0) continue;
      for (int ax = 0; ax < 3; ++ax) centers[k].pos[ax] = acc[k].pos[ax] / count[k];
      centers[k].intensity = acc[k].intensity / count[k];
    }
  }

  enforce_connectivity(dims, labels, static_cast<int>(centers.size()));

  // compact relabelling in raster order of first appearance
  std::vector<std::int32_t> remap(centers.size(), -1);
  std::int32_t next = 0;
  for (auto& l : labels) {
    if (remap[l] < 0) remap[l] = next++;
    l = remap[l];
  }
  return SupervoxelLabeling{dims, std::move(labels), next};
}

int schedule_region_count(int iteration) {
  if (iteration < 0) throw std::invalid_argument("iteration must be >= 0");
  const double size = 100.0 * std::pow(0.45, iteration);
  // guard against pow rounding just above an integer
  return std::max(1, static_cast<int>(std::ceil(size - 1e-9)));
}

std::vector<std::size_t> region_of(const SupervoxelLabeling& labeling, std::size_t voxel) {
  if (voxel >= labeling.labels.size()) throw std::out_of_range("voxel outside grid");
  const auto l = labeling.labels[voxel];
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labeling.labels.size(); ++i)
    if (labeling.labels[i] == l) out.push_back(i);
  return out;
}

std::vector<std::vector<std::size_t>> region_members(const SupervoxelLabeling& labeling) {
  std::vector<std::vector<std::size_t>> out(labeling.region_count);
  for (std::size_t i = 0; i < labeling.labels.size(); ++i) out[labeling.labels[i]].push_back(i);
  return out;
}

SupervoxelLabeling identity_labeling(const Dims& dims) {
  SupervoxelLabeling l{dims, std::vector<std::int32_t>(dims.count()), static_cast<int>(dims.count())};
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = static_cast<std::int32_t>(i);
  return l;
}

}  // namespace iris
