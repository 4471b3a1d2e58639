#include <doctest.h>

#include <cmath>
#include <random>

#include "iris/env.hpp"
#include "iris/reward.hpp"
#include "oracles.hpp"

using namespace iris;

namespace {

/// 1x9x9 mask with a 3x3 foreground square in the middle.
Mask square() {
  std::vector<std::uint8_t> lab(81, 0);
  for (int y = 3; y < 6; ++y)
    for (int x = 3; x < 6; ++x) lab[y * 9 + x] = 1;
  return Mask({1, 9, 9}, lab);
}

}  // namespace

TEST_CASE("boundary voxels get weight 1 and the farthest voxel weight 0") {
  const Mask gt = square();
  const auto w = boundary_weights(gt, {});
  REQUIRE(w.boundary_present);
  const std::size_t edge = 3 * 9 + 3, centre = 4 * 9 + 4, corner = 0;
  CHECK(w.t[edge] == 1.0);
  CHECK(w.g[edge] == 0.0);
  CHECK(w.t[centre] < 1.0);  // the centre has no background 6-neighbour
  CHECK(w.g[centre] == doctest::Approx(1.0));
  CHECK(w.t[corner] == 0.0);
  for (double t : w.t) {
    CHECK(t >= 0.0);
    CHECK(t <= 1.0);
  }
  const double gmin = *std::min_element(w.g.begin(), w.g.end());
  for (std::size_t i = 0; i < w.t.size(); ++i) CHECK((w.t[i] == 1.0) == (w.g[i] == gmin));
}

TEST_CASE("boundary set ignores the grid border") {
  const Mask full({1, 4, 4}, 1);
  const auto w = boundary_weights(full, {});
  CHECK_FALSE(w.boundary_present);
  for (double t : w.t) CHECK(t == 0.0);
}

TEST_CASE("all-background mask disables the boundary term") {
  const auto w = boundary_weights(Mask({2, 5, 5}, 0), {});
  CHECK_FALSE(w.boundary_present);
  for (double t : w.t) CHECK(t == 0.0);
  const std::vector<double> a(50, 0.2), b(50, 0.9);
  for (double r : boundary_reward(a, b, Mask({2, 5, 5}, 0), w)) CHECK(r == 0.0);
}

TEST_CASE("boundary distances match a brute-force scan with anisotropic spacing") {
  std::mt19937_64 rng(4);
  const Dims d{5, 7, 6};
  const Spacing s{2.0, 1.0, 0.5};
  const Mask gt = oracle::random_mask(d, rng);
  const auto w = boundary_weights(gt, s);
  std::vector<std::size_t> boundary;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt[i]) continue;
    const Index3 p = unflatten(d, i);
    for (const auto& o : face_offsets()) {
      const Index3 q{p.z + o.z, p.y + o.y, p.x + o.x};
      if (in_grid(d, q) && !gt[flat_index(d, q)]) {
        boundary.push_back(i);
        break;
      }
    }
  }
  REQUIRE_FALSE(boundary.empty());
  const auto ref = oracle::brute_euclidean(d, s, boundary);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(w.g[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("global reward for y=1, p 0.5 -> 0.9 is ln 0.9 - ln 0.5, and antisymmetric") {
  const Mask gt({1, 1, 1}, 1);
  const std::vector<double> a{0.5}, b{0.9};
  CHECK(global_reward(a, b, gt)[0] == doctest::Approx(std::log(0.9) - std::log(0.5)).epsilon(1e-12));
  CHECK(global_reward(a, b, gt)[0] == doctest::Approx(0.58779).epsilon(1e-5));
  CHECK(global_reward(b, a, gt)[0] == doctest::Approx(-0.58779).epsilon(1e-5));
  CHECK(global_reward(a, a, gt)[0] == 0.0);
}

TEST_CASE("cross entropy stays finite at saturated probabilities") {
  CHECK(std::isfinite(cross_entropy(0.0, 1)));
  CHECK(std::isfinite(cross_entropy(1.0, 0)));
  CHECK(cross_entropy(0.0, 1) == doctest::Approx(-std::log(kProbClamp)));
  CHECK(cross_entropy(1.0, 1) == doctest::Approx(-std::log(1.0 - kProbClamp)));
}

TEST_CASE("boundary reward follows the sign of the classification change") {
  const Mask gt = square();
  const auto w = boundary_weights(gt, {});
  const std::size_t edge = 3 * 9 + 3;
  std::vector<double> prev(81, 0.0), cur(81, 0.0);
  for (std::size_t i = 0; i < 81; ++i) prev[i] = cur[i] = gt[i] ? 0.8 : 0.2;
  SUBCASE("staying correct earns nothing") {
    cur[edge] = 0.9;
    for (double r : boundary_reward(prev, cur, gt, w)) CHECK(r == 0.0);
  }
  SUBCASE("boundary voxel wrong to correct earns +2") {
    prev[edge] = 0.3;
    const auto r = boundary_reward(prev, cur, gt, w);
    CHECK(r[edge] == doctest::Approx(2.0));
  }
  SUBCASE("voxel with t = 0.25 going correct to wrong costs 0.5") {
    auto w2 = w;
    const std::size_t i = 1 * 9 + 1;
    w2.t[i] = 0.25;
    cur[i] = 0.7;
    CHECK(boundary_reward(prev, cur, gt, w2)[i] == doctest::Approx(-0.5));
  }
}

TEST_CASE("total reward is global plus lambda times boundary, with |r_b| <= 2") {
  std::mt19937_64 rng(1);
  const Mask gt = square();
  const auto w = boundary_weights(gt, {});
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> a(81), b(81);
  for (auto& x : a) x = u(rng);
  for (auto& x : b) x = u(rng);
  RewardConfig cfg;
  cfg.lambda_boundary = 0.7;
  const auto r = compute_reward(a, b, gt, w, cfg);
  for (std::size_t i = 0; i < 81; ++i) {
    CHECK(std::abs(r.r_total[i] - (r.r_global[i] + 0.7 * r.r_boundary[i])) <= 1e-12);
    CHECK(std::abs(r.r_boundary[i]) <= 2.0);
    if ((a[i] > 0.5) == (b[i] > 0.5)) CHECK(r.r_boundary[i] == 0.0);
  }
}

TEST_CASE("absolute reward form is -chi + lambda psi of the current step") {
  const Mask gt = square();
  const auto w = boundary_weights(gt, {});
  std::vector<double> a(81, 0.5), b(81, 0.7);
  RewardConfig cfg;
  cfg.form = RewardForm::Absolute;
  cfg.lambda_boundary = 0.5;
  const auto r = compute_reward(a, b, gt, w, cfg);
  const auto psi = boundary_score(b, gt, w);
  for (std::size_t i = 0; i < 81; ++i)
    CHECK(r.r_total[i] == doctest::Approx(-cross_entropy(b[i], gt[i]) + 0.5 * psi[i]).epsilon(1e-12));
}

TEST_CASE("discounted return of [1,1,1,1] with gamma 0.95 is 3.709875") {
  const std::vector<std::vector<double>> totals(4, std::vector<double>{1.0});
  const auto R = discounted_returns(totals, 0.95);
  CHECK(R.front()[0] == doctest::Approx(3.709875).epsilon(1e-12));
  CHECK(R.back()[0] == doctest::Approx(1.0));
  const auto single = discounted_returns({{0.37}}, 0.95);
  CHECK(single.front()[0] == 0.37);
}

TEST_CASE("with gamma 1 and lambda 0 the global rewards telescope to chi(0) - chi(T)") {
  std::mt19937_64 rng(8);
  const Mask gt = square();
  const auto spec = default_action_spec();
  RewardConfig cfg;
  cfg.lambda_boundary = 0.0;
  const auto w = boundary_weights(gt, {});
  std::vector<double> p(81, 0.5);
  const std::vector<double> p0 = p;
  std::vector<std::vector<double>> totals;
  for (int t = 0; t < 6; ++t) {
    std::vector<std::uint8_t> act(81);
    for (auto& a : act) a = rng() % spec.size();
    const auto next = apply_actions(p, act, spec);
    totals.push_back(compute_reward(p, next, gt, w, cfg).r_total);
    p = next;
  }
  const auto R = discounted_returns(totals, 1.0);
  for (std::size_t i = 0; i < 81; ++i)
    CHECK(std::abs(R.front()[i] - (cross_entropy(p0[i], gt[i]) - cross_entropy(p[i], gt[i]))) <= 1e-9);
}
