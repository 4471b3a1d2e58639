#include "iris/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "iris/distfield.hpp"

namespace iris {

namespace {

void check_sizes(std::span<const double> a, std::span<const double> b, const Mask& gt) {
  if (a.size() != gt.size() || b.size() != gt.size()) throw std::invalid_argument("reward: size mismatch");
}

}  // namespace

BoundaryWeightField boundary_weights(const Mask& gt, const Spacing& spacing) {
  const Dims& dims = gt.dims();
  const std::size_t n = gt.size();
  BoundaryWeightField w{dims, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), false};

  std::vector<std::uint8_t> boundary(n, 0);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!gt[i]) continue;
    const Index3 p = unflatten(dims, i);
    for (const Index3& o : face_offsets()) {
      const Index3 q{p.z + o.z, p.y + o.y, p.x + o.x};
      if (in_grid(dims, q) && !gt[flat_index(dims, q)]) {
        boundary[i] = 1;
        any = true;
        break;
      }
    }
  }
  if (!any) return w;

  const auto sq = squared_edt(dims, spacing, boundary);
  for (std::size_t i = 0; i < n; ++i) w.g[i] = std::sqrt(sq[i]);
  const auto [lo, hi] = std::minmax_element(w.g.begin(), w.g.end());
  const double gmin = *lo, gmax = *hi;
  if (!(gmax > gmin)) return w;
  w.boundary_present = true;
  for (std::size_t i = 0; i < n; ++i) w.t[i] = 1.0 - (w.g[i] - gmin) / (gmax - gmin);
  return w;
}

double cross_entropy(double p, std::uint8_t y) {
  const double c = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return y ? -std::log(c) : -std::log(1.0 - c);
}

std::vector<double> boundary_score(std::span<const double> p, const Mask& gt, const BoundaryWeightField& w) {
  std::vector<double> out(p.size(), 0.0);
  if (!w.boundary_present) return out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool correct = (p[i] > 0.5) == (gt[i] == 1);
    out[i] = correct ? w.t[i] : -w.t[i];
  }
  return out;
}

std::vector<double> global_reward(std::span<const double> p_prev, std::span<const double> p_cur, const Mask& gt) {
  check_sizes(p_prev, p_cur, gt);
  std::vector<double> r(gt.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = cross_entropy(p_prev[i], gt[i]) - cross_entropy(p_cur[i], gt[i]);
  return r;
}

std::vector<double> boundary_reward(std::span<const double> p_prev, std::span<const double> p_cur, const Mask& gt,
                                    const BoundaryWeightField& w) {
  check_sizes(p_prev, p_cur, gt);
  const auto before = boundary_score(p_prev, gt, w);
  auto after = boundary_score(p_cur, gt, w);
  for (std::size_t i = 0; i < after.size(); ++i) after[i] -= before[i];
  return after;
}

RewardField compute_reward(std::span<const double> p_prev, std::span<const double> p_cur, const Mask& gt,
                           const BoundaryWeightField& w, const RewardConfig& cfg) {
  RewardField f;
  if (cfg.form == RewardForm::Relative) {
    f.r_global = global_reward(p_prev, p_cur, gt);
    f.r_boundary = boundary_reward(p_prev, p_cur, gt, w);
  } else {
    check_sizes(p_prev, p_cur, gt);
    f.r_global.resize(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) f.r_global[i] = -cross_entropy(p_cur[i], gt[i]);
    f.r_boundary = boundary_score(p_cur, gt, w);
  }
  f.r_total.resize(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) f.r_total[i] = f.r_global[i] + cfg.lambda_boundary * f.r_boundary[i];
  return f;
}

std::vector<std::vector<double>> discounted_returns(const std::vector<std::vector<double>>& totals, double gamma) {
  if (totals.empty()) throw std::invalid_argument("discounted_returns: no steps");
  const std::size_t n = totals.front().size();
  std::vector<std::vector<double>> out(totals.size());
  std::vector<double> R(n, 0.0);
  for (std::size_t k = totals.size(); k-- > 0;) {
    if (totals[k].size() != n) throw std::invalid_argument("discounted_returns: size mismatch");
    for (std::size_t i = 0; i < n; ++i) R[i] = totals[k][i] + gamma * R[i];
    out[k] = R;
  }
  return out;
}

}  // namespace iris
