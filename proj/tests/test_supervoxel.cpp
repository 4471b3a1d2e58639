#include <doctest.h>

#include <limits>
#include <map>
#include <random>
#include <set>

#include "iris/supervoxel.hpp"

using namespace iris;

namespace {

Volume split_image() {
  std::vector<double> v(64);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) v[y * 8 + x] = x < 4 ? 0.0 : 1.0;
  return Volume({1, 8, 8}, {}, v);
}

/// Lowest-cost 2-means partition over every pair of starting centres, using the same
/// joint distance as SLIC.
std::vector<int> exhaustive_two_means(const Volume& v, double spatial_w, const double scale[3]) {
  const Dims& d = v.dims();
  const std::size_t n = d.count();
  auto feat = [&](std::size_t i) {
    const Index3 p = unflatten(d, i);
    return std::array<double, 4>{p.z * scale[0], p.y * scale[1], p.x * scale[2], v[i]};
  };
  auto dist = [&](const std::array<double, 4>& c, std::size_t i) {
    const auto f = feat(i);
    double s = 0;
    for (int a = 0; a < 3; ++a) s += (f[a] - c[a]) * (f[a] - c[a]);
    return (f[3] - c[3]) * (f[3] - c[3]) + spatial_w * s;
  };
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> best;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      std::array<std::array<double, 4>, 2> c{feat(a), feat(b)};
      std::vector<int> lab(n, 0);
      for (int it = 0; it < 50; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
          const int l = dist(c[1], i) < dist(c[0], i) ? 1 : 0;
          changed |= l != lab[i];
          lab[i] = l;
        }
        std::array<std::array<double, 4>, 2> acc{};
        int cnt[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
          const auto f = feat(i);
          for (int k = 0; k < 4; ++k) acc[lab[i]][k] += f[k];
          ++cnt[lab[i]];
        }
        for (int k = 0; k < 2; ++k)
          if (cnt[k])
            for (int j = 0; j < 4; ++j) c[k][j] = acc[k][j] / cnt[k];
        if (!changed && it > 0) break;
      }
      double cost = 0;
      for (std::size_t i = 0; i < n; ++i) cost += dist(c[lab[i]], i);
      if (cost < best_cost - 1e-12) {
        best_cost = cost;
        best = lab;
      }
    }
  return best;
}

bool same_partition(const std::vector<std::int32_t>& a, const std::vector<int>& b) {
  std::map<int, int> fwd, back;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it, ok] = fwd.emplace(a[i], b[i]);
    if (it->second != b[i]) return false;
    auto [jt, ok2] = back.emplace(b[i], a[i]);
    if (jt->second != a[i]) return false;
  }
  return true;
}

void check_partition(const SupervoxelLabeling& l) {
  std::vector<int> seen(l.region_count, 0);
  for (auto x : l.labels) {
    REQUIRE(x >= 0);
    REQUIRE(x < l.region_count);
    seen[x] = 1;
  }
  for (int s : seen) CHECK(s == 1);
  // every region is a single 26-connected component
  const auto offs = neighbor_offsets26(l.dims);
  std::vector<int> comp(l.labels.size(), -1);
  std::vector<int> comps_of(l.region_count, 0);
  for (std::size_t s = 0; s < l.labels.size(); ++s) {
    if (comp[s] >= 0) continue;
    ++comps_of[l.labels[s]];
    std::vector<std::size_t> st{s};
    comp[s] = 1;
    while (!st.empty()) {
      const auto i = st.back();
      st.pop_back();
      const Index3 p = unflatten(l.dims, i);
      for (const auto& o : offs) {
        const Index3 q{p.z + o.z, p.y + o.y, p.x + o.x};
        if (!in_grid(l.dims, q)) continue;
        const auto j = flat_index(l.dims, q);
        if (comp[j] < 0 && l.labels[j] == l.labels[s]) {
          comp[j] = 1;
          st.push_back(j);
        }
      }
    }
  }
  for (int c : comps_of) CHECK(c == 1);
}

}  // namespace

TEST_CASE("region count equal to the voxel count gives singleton regions") {
  std::mt19937_64 rng(1);
  std::vector<double> v(27);
  for (auto& x : v) x = std::uniform_real_distribution<double>(0, 1)(rng);
  const auto l = slic(Volume({3, 3, 3}, {}, v), 27);
  CHECK(l.region_count == 27);
  CHECK(std::set<int>(l.labels.begin(), l.labels.end()).size() == 27);
  for (std::size_t i = 0; i < 27; ++i) CHECK(region_of(l, i) == std::vector<std::size_t>{i});
}

TEST_CASE("region count 1 covers the grid") {
  const auto l = slic(split_image(), 1);
  CHECK(l.region_count == 1);
  for (auto x : l.labels) CHECK(x == 0);
  CHECK(region_of(l, 5).size() == 64);
}

TEST_CASE("split image with two regions matches the exhaustive 2-means partition") {
  const Volume v = split_image();
  const SlicConfig cfg;
  const auto l = slic(v, 2, cfg);
  CHECK(l.region_count == 2);

  const auto grid = seed_grid(v.dims(), 2);
  double interval = 0;
  int active = 0;
  for (int a = 0; a < 3; ++a)
    if (v.dims().extent(a) > 1) {
      interval += static_cast<double>(v.dims().extent(a)) / grid[a] * cfg.spacing_scale[a];
      ++active;
    }
  interval /= active;
  const double w = (cfg.compactness / interval) * (cfg.compactness / interval);
  const auto ref = exhaustive_two_means(v, w, cfg.spacing_scale);
  CHECK(same_partition(l.labels, ref));

  std::vector<std::size_t> left;
  for (std::size_t i = 0; i < 64; ++i)
    if (i % 8 < 4) left.push_back(i);
  CHECK(region_of(l, 8 * 3 + 1) == left);
}

TEST_CASE("slic labelings are partitions of connected regions and deterministic") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (const Dims d : {Dims{1, 32, 32}, Dims{6, 12, 10}}) {
    std::vector<double> v(d.count());
    for (auto& x : v) x = n(rng);
    const Volume vol(d, {}, v);
    for (int k : {100, 45, 21, 10, 3}) {
      const auto a = slic(vol, k);
      check_partition(a);
      CHECK(a.region_count <= k);
      const auto b = slic(vol, k);
      CHECK(a.labels == b.labels);
    }
  }
}

TEST_CASE("slic rejects out-of-range region counts") {
  CHECK_THROWS(slic(split_image(), 0));
  CHECK_THROWS(slic(split_image(), 65));
}

TEST_CASE("schedule values follow ceil(100 * 0.45^it)") {
  CHECK(schedule_region_count(0) == 100);
  CHECK(schedule_region_count(1) == 45);
  CHECK(schedule_region_count(2) == 21);
  CHECK(schedule_region_count(3) == 10);
  int prev = schedule_region_count(0);
  for (int it = 1; it <= 10; ++it) {
    const int c = schedule_region_count(it);
    CHECK(c <= prev);
    CHECK(c >= 1);
    prev = c;
  }
  CHECK_THROWS(schedule_region_count(-1));
}

TEST_CASE("region_members lists every voxel exactly once") {
  const auto l = slic(split_image(), 4);
  const auto members = region_members(l);
  std::size_t total = 0;
  for (std::size_t r = 0; r < members.size(); ++r) {
    total += members[r].size();
    for (auto i : members[r]) CHECK(l.labels[i] == static_cast<int>(r));
  }
  CHECK(total == 64);
}

TEST_CASE("seed grid product never exceeds the request") {
  for (int k = 1; k <= 120; ++k) {
    const auto g = seed_grid({1, 64, 64}, k);
    CHECK(g[0] == 1);
    CHECK(g[1] * g[2] <= k);
  }
  const auto g = seed_grid({1, 64, 64}, 100);
  CHECK(g[1] * g[2] == 100);
}
