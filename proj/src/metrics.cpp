#include "iris/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "iris/distfield.hpp"

namespace iris {

double dsc(const Mask& a, const Mask& b) {
  if (!(a.dims() == b.dims())) throw std::invalid_argument("dsc: dims mismatch");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    inter += a[i] & b[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::size_t> surface_voxels(const Mask& m) {
  const Dims& d = m.dims();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const Index3 p = unflatten(d, i);
    for (const Index3& o : face_offsets()) {
      const Index3 q{p.z + o.z, p.y + o.y, p.x + o.x};
      if (!in_grid(d, q) || !m[flat_index(d, q)]) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistances surface_distances(const Mask& a, const Mask& b, const Spacing& spacing) {
  if (!(a.dims() == b.dims())) throw std::invalid_argument("surface_distances: dims mismatch");
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  if (sa.empty() || sb.empty()) throw UndefinedSurfaceDistance();

  const Dims& d = a.dims();
  auto marks = [&](const std::vector<std::size_t>& s) {
    std::vector<std::uint8_t> m(d.count(), 0);
    for (auto i : s) m[i] = 1;
    return m;
  };
  const auto ma = marks(sa), mb = marks(sb);
  const Spacing unit{};
  const auto to_a_vox = squared_edt(d, unit, ma), to_b_vox = squared_edt(d, unit, mb);
  const auto to_a_mm = squared_edt(d, spacing, ma), to_b_mm = squared_edt(d, spacing, mb);

  double sum = 0.0;
  std::vector<double> pooled;
  pooled.reserve(sa.size() + sb.size());
  for (auto i : sa) {
    sum += std::sqrt(to_b_vox[i]);
    pooled.push_back(std::sqrt(to_b_mm[i]));
  }
  for (auto i : sb) {
    sum += std::sqrt(to_a_vox[i]);
    pooled.push_back(std::sqrt(to_a_mm[i]));
  }
  SurfaceDistances out;
  out.assd = sum / static_cast<double>(sa.size() + sb.size());
  out.hd95 = percentile(std::move(pooled), 95.0);
  return out;
}

MetricReport evaluate_masks(const Mask& pred, const Mask& gt, const Spacing& spacing) {
  MetricReport r;
  r.dsc = dsc(pred, gt);
  try {
    const auto sd = surface_distances(pred, gt, spacing);
    r.assd = sd.assd;
    r.hd95 = sd.hd95;
  } catch (const UndefinedSurfaceDistance&) {
  }
  return r;
}

}  // namespace iris
