#include <doctest.h>

#include <cmath>
#include <random>

#include "iris/distfield.hpp"
#include "oracles.hpp"

using namespace iris;

namespace {

Volume random_volume(const Dims& d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(d.count());
  for (auto& x : v) x = n(rng);
  return Volume(d, {}, v);
}

std::vector<std::size_t> random_seeds(const Dims& d, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> s;
  for (int i = 0; i < count; ++i) s.push_back(rng() % d.count());
  return s;
}

}  // namespace

TEST_CASE("geodesic distance is zero at every seed") {
  const Volume v = random_volume({4, 6, 5}, 1);
  const auto seeds = random_seeds(v.dims(), 5, 2);
  const auto f = geodesic_transform(v, seeds, 1e-2);
  for (auto s : seeds) CHECK(f.values[s] == 0.0);
  for (double x : f.values) CHECK(x >= 0.0);
}

TEST_CASE("geodesic on a constant 12^3 image with regulariser 1 matches Dijkstra within 5%") {
  const Volume v({12, 12, 12}, {}, 0.7);
  const std::vector<std::size_t> seeds{flat_index(v.dims(), {0, 0, 0}), flat_index(v.dims(), {7, 3, 10})};
  const auto f = geodesic_transform(v, seeds, 1.0);
  const auto ref = oracle::dijkstra_geodesic(v, seeds, 1.0);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i] == 0.0)
      CHECK(f.values[i] == 0.0);
    else
      CHECK(std::abs(f.values[i] - ref[i]) / ref[i] <= 0.05);
  }
}

TEST_CASE("geodesic on random images tracks Dijkstra with anisotropic spacing") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Volume raw = random_volume({6, 9, 8}, 100 + trial, 0.3);
    const Volume v(raw.dims(), {2.0, 1.0, 0.5}, std::vector<double>(raw.voxels().begin(), raw.voxels().end()));
    const auto seeds = random_seeds(v.dims(), 3, 200 + trial);
    const auto f = geodesic_transform(v, seeds, 0.5);
    const auto ref = oracle::dijkstra_geodesic(v, seeds, 0.5);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (ref[i] > 0) worst = std::max(worst, std::abs(f.values[i] - ref[i]) / ref[i]);
    CHECK(worst <= 0.05);
  }
}

TEST_CASE("geodesic with an empty seed set is all zero") {
  const Volume v = random_volume({3, 4, 5}, 3);
  const auto f = geodesic_transform(v, {}, 1e-2);
  for (double x : f.values) CHECK(x == 0.0);
}

TEST_CASE("geodesic is invariant to an intensity offset") {
  const Volume v = random_volume({3, 8, 8}, 4);
  std::vector<double> shifted(v.voxels().begin(), v.voxels().end());
  for (auto& x : shifted) x += 12.5;
  const Volume w(v.dims(), v.spacing(), shifted);
  const auto seeds = random_seeds(v.dims(), 4, 5);
  const auto a = geodesic_transform(v, seeds, 1e-2);
  const auto b = geodesic_transform(w, seeds, 1e-2);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-9));
}

TEST_CASE("extra sweeps never increase the geodesic field") {
  const Volume v = random_volume({5, 10, 10}, 6, 2.0);
  const auto seeds = random_seeds(v.dims(), 2, 7);
  std::vector<double> prev;
  for (int pairs = 1; pairs <= 4; ++pairs) {
    GeodesicOptions o;
    o.max_sweep_pairs = pairs;
    o.tolerance = 0.0;
    const auto f = geodesic_transform(v, seeds, 1e-2, o);
    if (!prev.empty())
      for (std::size_t i = 0; i < prev.size(); ++i) CHECK(f.values[i] <= prev[i]);
    prev = f.values;
  }
}

TEST_CASE("out-of-range seeds are rejected") {
  const Volume v({1, 2, 2}, {}, 0.0);
  const std::vector<std::size_t> bad{4};
  CHECK_THROWS_AS(geodesic_transform(v, bad, 1.0), std::out_of_range);
  CHECK_THROWS_AS(euclidean_transform(v.dims(), {}, bad), std::out_of_range);
  CHECK_THROWS_AS(gaussian_transform(v.dims(), {}, bad, 1.0), std::out_of_range);
}

TEST_CASE("euclidean distance along one axis from a seed at the origin") {
  const Dims d{1, 1, 8};
  const std::vector<std::size_t> seeds{0};
  const auto f = euclidean_transform(d, {}, seeds);
  CHECK(f.values[flat_index(d, {0, 0, 3})] == doctest::Approx(3.0));
}

TEST_CASE("euclidean field of two seeds is the pointwise minimum") {
  const Dims d{3, 5, 7};
  const Spacing s{1.5, 1.0, 0.75};
  const std::vector<std::size_t> a{flat_index(d, {0, 1, 2})}, b{flat_index(d, {2, 4, 6})};
  const std::vector<std::size_t> ab{a[0], b[0]};
  const auto fa = euclidean_transform(d, s, a), fb = euclidean_transform(d, s, b), fab = euclidean_transform(d, s, ab);
  for (std::size_t i = 0; i < d.count(); ++i) CHECK(fab.values[i] == doctest::Approx(std::min(fa.values[i], fb.values[i])));
}

TEST_CASE("euclidean transform matches an exhaustive nearest-seed scan on random 10^3 grids") {
  const Dims d{10, 10, 10};
  for (int trial = 0; trial < 5; ++trial) {
    const Spacing s{1.0 + trial * 0.3, 1.0, 2.0 - trial * 0.2};
    const auto seeds = random_seeds(d, 1 + trial * 3, 40 + trial);
    const auto f = euclidean_transform(d, s, seeds);
    const auto ref = oracle::brute_euclidean(d, s, seeds);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(f.values[i] - ref[i]) < 1e-9);
  }
}

TEST_CASE("euclidean with no seeds is all zero") {
  const auto f = euclidean_transform({2, 3, 4}, {}, {});
  for (double x : f.values) CHECK(x == 0.0);
}

TEST_CASE("gaussian map is 0 at a seed and 1 - exp(-1/2) at distance sigma") {
  const Dims d{1, 1, 20};
  const std::vector<std::size_t> seeds{0};
  const auto f = gaussian_transform(d, {}, seeds, 4.0);
  CHECK(f.values[0] == 0.0);
  CHECK(f.values[4] == doctest::Approx(1.0 - std::exp(-0.5)).epsilon(1e-12));
  CHECK(f.values[4] == doctest::Approx(0.3935).epsilon(1e-4));
  const auto far = gaussian_transform({1, 1, 200}, {}, seeds, 2.0);
  CHECK(far.values[199] == doctest::Approx(1.0).epsilon(1e-12));
  for (double x : far.values) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
}

TEST_CASE("gaussian rejects non-positive sigma and maps empty seeds to zero") {
  CHECK_THROWS(gaussian_transform({1, 2, 2}, {}, {}, 0.0));
  const auto f = gaussian_transform({1, 2, 2}, {}, {}, 1.0);
  for (double x : f.values) CHECK(x == 0.0);
}

TEST_CASE("distance_transform dispatches on the kind") {
  const Volume v = random_volume({1, 6, 6}, 8);
  const std::vector<std::size_t> seeds{7};
  CHECK(distance_transform(v, seeds, Euclidean{}).values == euclidean_transform(v.dims(), v.spacing(), seeds).values);
  CHECK(distance_transform(v, seeds, Gaussian{2.0}).values ==
        gaussian_transform(v.dims(), v.spacing(), seeds, 2.0).values);
  CHECK(distance_transform(v, seeds, Geodesic{0.3}).values == geodesic_transform(v, seeds, 0.3).values);
}

TEST_CASE("squared EDT is infinite when nothing is marked") {
  const std::vector<std::uint8_t> none(6, 0);
  for (double x : squared_edt({1, 2, 3}, {}, none)) CHECK(std::isinf(x));
}
