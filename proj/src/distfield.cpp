#include "iris/distfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace iris {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_seeds(const Dims& dims, std::span<const std::size_t> seeds) {
  const std::size_t n = dims.count();
  for (auto s : seeds)
    if (s >= n) throw std::out_of_range("seed index " + std::to_string(s) + " outside grid");
}

// 1D squared distance transform over a strided line; positions are weighted by `step`.
// Lower envelope of parabolas rooted at the finite samples only.
void edt_line(double* f, std::size_t n, std::size_t stride, double step, std::vector<double>& buf,
              std::vector<int>& v, std::vector<double>& z) {
  buf.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  v.resize(n);
  z.resize(n + 1);
  const double w2 = step * step;
  auto intersect = [&](int q, int p) {
    return ((buf[q] + w2 * q * q) - (buf[p] + w2 * p * p)) / (2.0 * w2 * (q - p));
  };
  int k = -1;
  for (int q = 0; q < static_cast<int>(n); ++q) {
    if (!std::isfinite(buf[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < static_cast<int>(n); ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    f[q * stride] = w2 * dq * dq + buf[v[j]];
  }
}

}  // namespace

double DistanceField::max() const {
  double m = 0.0;
  for (double x : values) m = std::max(m, x);
  return m;
}

std::vector<double> squared_edt(const Dims& dims, const Spacing& spacing, std::span<const std::uint8_t> is_seed) {
  const std::size_t n = dims.count();
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = is_seed[i] ? 0.0 : kInf;

  std::vector<double> buf, z;
  std::vector<int> v;
  const std::size_t W = dims.width, H = dims.height, D = dims.depth;
  // x lines
  for (std::size_t zz = 0; zz < D; ++zz)
    for (std::size_t y = 0; y < H; ++y) edt_line(&f[(zz * H + y) * W], W, 1, spacing.x, buf, v, z);
  // y lines
  for (std::size_t zz = 0; zz < D; ++zz)
    for (std::size_t x = 0; x < W; ++x) edt_line(&f[zz * H * W + x], H, W, spacing.y, buf, v, z);
  // z lines
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) edt_line(&f[y * W + x], D, H * W, spacing.z, buf, v, z);
  return f;
}

DistanceField geodesic_transform(const Volume& v, std::span<const std::size_t> seeds, double spatial_regularizer,
                                 const GeodesicOptions& opts) {
  const Dims& dims = v.dims();
  check_seeds(dims, seeds);
  const std::size_t n = dims.count();
  DistanceField out{dims, std::vector<double>(n, 0.0)};
  if (seeds.empty()) return out;
  if (spatial_regularizer < 0.0) throw std::invalid_argument("spatial regularizer must be >= 0");

  struct Offset {
    Index3 d;
    std::ptrdiff_t flat;
    double spatial2;  // reg^2 * |step|^2 in mm
  };
  const Spacing& sp = v.spacing();
  std::vector<Offset> forward, backward;
  const double reg2 = spatial_regularizer * spatial_regularizer;
  for (const Index3& o : neighbor_offsets26(dims)) {
    const std::ptrdiff_t flat =
        (static_cast<std::ptrdiff_t>(o.z) * dims.height + o.y) * static_cast<std::ptrdiff_t>(dims.width) + o.x;
    const double len2 = o.z * o.z * sp.z * sp.z + o.y * o.y * sp.y * sp.y + o.x * o.x * sp.x * sp.x;
    // forward sweep reads neighbours already visited (negative flat offsets)
    (flat < 0 ? forward : backward).push_back({o, flat, reg2 * len2});
  }

  std::vector<double>& d = out.values;
  std::fill(d.begin(), d.end(), kInf);
  for (auto s : seeds) d[s] = 0.0;
  const auto img = v.voxels();

  auto relax = [&](std::size_t i, const Index3& p, const std::vector<Offset>& offs) {
    double best = d[i];
    const double vi = img[i];
    for (const Offset& o : offs) {
      const Index3 q{p.z + o.d.z, p.y + o.d.y, p.x + o.d.x};
      if (!in_grid(dims, q)) continue;
      const std::size_t j = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + o.flat);
      const double dj = d[j];
      if (dj == kInf) continue;
      const double di = vi - img[j];
      const double cand = dj + std::sqrt(o.spatial2 + di * di);
      if (cand < best) best = cand;
    }
    return best;
  };

  for (int pass = 0; pass < opts.max_sweep_pairs; ++pass) {
    double max_change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double nd = relax(i, unflatten(dims, i), forward);
      if (nd < d[i]) {
        max_change = std::max(max_change, std::isfinite(d[i]) ? d[i] - nd : kInf);
        d[i] = nd;
      }
    }
    for (std::size_t r = n; r-- > 0;) {
      const double nd = relax(r, unflatten(dims, r), backward);
      if (nd < d[r]) {
        max_change = std::max(max_change, std::isfinite(d[r]) ? d[r] - nd : kInf);
        d[r] = nd;
      }
    }
    if (max_change < opts.tolerance) break;
  }
  return out;
}

DistanceField euclidean_transform(const Dims& dims, const Spacing& spacing, std::span<const std::size_t> seeds) {
  check_seeds(dims, seeds);
  DistanceField out{dims, std::vector<double>(dims.count(), 0.0)};
  if (seeds.empty()) return out;
  std::vector<std::uint8_t> mark(dims.count(), 0);
  for (auto s : seeds) mark[s] = 1;
  auto sq = squared_edt(dims, spacing, mark);
  for (std::size_t i = 0; i < sq.size(); ++i) out.values[i] = std::sqrt(sq[i]);
  return out;
}

DistanceField gaussian_transform(const Dims& dims, const Spacing& spacing, std::span<const std::size_t> seeds,
                                 double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be > 0");
  check_seeds(dims, seeds);
  DistanceField out{dims, std::vector<double>(dims.count(), 0.0)};
  if (seeds.empty()) return out;
  std::vector<std::uint8_t> mark(dims.count(), 0);
  for (auto s : seeds) mark[s] = 1;
  auto sq = squared_edt(dims, spacing, mark);
  for (std::size_t i = 0; i < sq.size(); ++i) out.values[i] = 1.0 - std::exp(-sq[i] / (2.0 * sigma * sigma));
  return out;
}

DistanceField distance_transform(const Volume& v, std::span<const std::size_t> seeds, const DistanceKind& kind) {
  return std::visit(
      [&](const auto& k) -> DistanceField {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Geodesic>)
          return geodesic_transform(v, seeds, k.spatial_regularizer);
        else if constexpr (std::is_same_v<K, Euclidean>)
          return euclidean_transform(v.dims(), v.spacing(), seeds);
        else
          return gaussian_transform(v.dims(), v.spacing(), seeds, k.sigma);
      },
      kind);
}

}  // namespace iris
