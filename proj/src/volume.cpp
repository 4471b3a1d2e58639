#include "iris/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

namespace iris {

namespace {

void check_dims(const Dims& dims) {
  if (!dims.valid()) throw std::invalid_argument("non-positive dims " + to_string(dims));
}

float to_le_float(float f) {
  if constexpr (std::endian::native == std::endian::big) {
    auto u = std::bit_cast<std::uint32_t>(f);
    u = ((u & 0xFFu) << 24) | ((u & 0xFF00u) << 8) | ((u >> 8) & 0xFF00u) | (u >> 24);
    return std::bit_cast<float>(u);
  }
  return f;
}

std::string header_line(const Dims& d, const Spacing& s, DType t) {
  nlohmann::json j;
  j["dims"] = {d.depth, d.height, d.width};
  j["spacing"] = {s.z, s.y, s.x};
  j["dtype"] = t == DType::F32 ? "f32" : "u8";
  return "IVOL1 " + j.dump() + "\n";
}

struct Decoded {
  Dims dims;
  Spacing spacing;
  DType dtype = DType::F32;
  std::string_view payload;
};

Decoded decode_header(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw FormatError("malformed header: missing newline");
  const std::string_view line = bytes.substr(0, nl);
  constexpr std::string_view magic = "IVOL1 ";
  if (line.substr(0, magic.size()) != magic) throw FormatError("malformed header: bad magic");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line.substr(magic.size()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  Decoded out;
  try {
    const auto& d = j.at("dims");
    const auto& s = j.at("spacing");
    if (!d.is_array() || d.size() != 3 || !s.is_array() || s.size() != 3)
      throw FormatError("malformed header: dims/spacing must have 3 entries");
    out.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    out.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype == "f32")
      out.dtype = DType::F32;
    else if (dtype == "u8")
      out.dtype = DType::U8;
    else
      throw FormatError("malformed header: unknown dtype " + dtype);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  if (!out.dims.valid()) throw FormatError("non-positive dims " + to_string(out.dims));
  if (!out.spacing.valid()) throw FormatError("non-positive spacing");

  out.payload = bytes.substr(nl + 1);
  const std::size_t elem = out.dtype == DType::F32 ? 4 : 1;
  if (out.payload.size() != out.dims.count() * elem) throw FormatError("payload length mismatch");
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed " + path.string());
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, std::vector<double> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
  check_dims(dims_);
  if (!spacing_.valid()) throw std::invalid_argument("non-positive spacing");
  if (voxels_.size() != dims_.count()) throw std::invalid_argument("voxel count does not match dims");
}

Volume::Volume(Dims dims, Spacing spacing, double fill)
    : Volume(dims, spacing, std::vector<double>(dims.valid() ? dims.count() : 0, fill)) {}

Mask::Mask(Dims dims, std::vector<std::uint8_t> labels) : dims_(dims), labels_(std::move(labels)) {
  check_dims(dims_);
  if (labels_.size() != dims_.count()) throw std::invalid_argument("label count does not match dims");
  for (auto l : labels_)
    if (l > 1) throw std::invalid_argument("mask labels must be 0 or 1");
}

Mask::Mask(Dims dims, std::uint8_t fill)
    : Mask(dims, std::vector<std::uint8_t>(dims.valid() ? dims.count() : 0, fill)) {}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), std::uint8_t{1}));
}

std::string encode_ivol(const Volume& v) {
  std::string out = header_line(v.dims(), v.spacing(), DType::F32);
  const std::size_t offset = out.size();
  out.resize(offset + v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = to_le_float(static_cast<float>(v[i]));
    std::memcpy(out.data() + offset + 4 * i, &f, 4);
  }
  return out;
}

std::string encode_ivol(const Mask& m, const Spacing& spacing) {
  std::string out = header_line(m.dims(), spacing, DType::U8);
  out.append(reinterpret_cast<const char*>(m.labels().data()), m.size());
  return out;
}

Volume decode_volume(std::string_view bytes) {
  const Decoded d = decode_header(bytes);
  std::vector<double> vox(d.dims.count());
  if (d.dtype == DType::F32) {
    for (std::size_t i = 0; i < vox.size(); ++i) {
      float f;
      std::memcpy(&f, d.payload.data() + 4 * i, 4);
      vox[i] = static_cast<double>(to_le_float(f));
    }
  } else {
    for (std::size_t i = 0; i < vox.size(); ++i) vox[i] = static_cast<std::uint8_t>(d.payload[i]);
  }
  return Volume(d.dims, d.spacing, std::move(vox));
}

std::pair<Mask, Spacing> decode_mask(std::string_view bytes) {
  const Decoded d = decode_header(bytes);
  if (d.dtype != DType::U8) throw FormatError("mask payload must be u8");
  std::vector<std::uint8_t> labels(d.payload.begin(), d.payload.end());
  for (auto l : labels)
    if (l > 1) throw FormatError("mask payload is not binary");
  return {Mask(d.dims, std::move(labels)), d.spacing};
}

void save_volume(const std::filesystem::path& path, const Volume& v) { write_file(path, encode_ivol(v)); }

void save_mask(const std::filesystem::path& path, const Mask& m, const Spacing& spacing) {
  write_file(path, encode_ivol(m, spacing));
}

Volume load_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }

Mask load_mask(const std::filesystem::path& path) { return decode_mask(read_file(path)).first; }

Volume normalize(const Volume& v) {
  const auto vox = v.voxels();
  const double n = static_cast<double>(vox.size());
  double mean = 0.0;
  for (double x : vox) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : vox) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);

  std::vector<double> out(vox.size(), 0.0);
  if (sd > 0.0 && std::isfinite(sd)) {
    for (std::size_t i = 0; i < vox.size(); ++i) out[i] = (vox[i] - mean) / sd;
  }
  return Volume(v.dims(), v.spacing(), std::move(out));
}

std::pair<Volume, Mask> generate_synthetic(const SynthSpec& spec) {
  check_dims(spec.dims);
  if (!(spec.contrast > 0.0)) throw std::invalid_argument("contrast must be > 0");
  if (spec.noise_stdev < 0.0) throw std::invalid_argument("noise stdev must be >= 0");
  if (spec.blob_min < 1 || spec.blob_max < spec.blob_min) throw std::invalid_argument("bad blob range");

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Dims& d = spec.dims;
  const bool active[3] = {d.depth > 1, d.height > 1, d.width > 1};
  const std::size_t n = d.count();

  std::vector<std::uint8_t> labels(n, 0);
  for (int attempt = 0;; ++attempt) {
    std::fill(labels.begin(), labels.end(), 0);
    const int blobs = std::uniform_int_distribution<int>(spec.blob_min, spec.blob_max)(rng);
    for (int b = 0; b < blobs; ++b) {
      double center[3], radius[3];
      for (int a = 0; a < 3; ++a) {
        const double ext = d.extent(a);
        center[a] = active[a] ? (0.2 + 0.6 * unit(rng)) * (ext - 1) : 0.0;
        radius[a] = active[a] ? (0.08 + 0.17 * unit(rng)) * ext : 1.0;
      }
      const double theta = std::numbers::pi * unit(rng);
      const double c = std::cos(theta), s = std::sin(theta);
      for (std::size_t i = 0; i < n; ++i) {
        const Index3 p = unflatten(d, i);
        const double dz = p.z - center[0];
        const double dy = p.y - center[1];
        const double dx = p.x - center[2];
        // in-plane rotation of the ellipse axes
        const double u = c * dy - s * dx;
        const double w = s * dy + c * dx;
        double r2 = 0.0;
        if (active[0]) r2 += (dz / radius[0]) * (dz / radius[0]);
        if (active[1]) r2 += (u / radius[1]) * (u / radius[1]);
        if (active[2]) r2 += (w / radius[2]) * (w / radius[2]);
        if (r2 <= 1.0) labels[i] = 1;
      }
    }
    const double frac =
        static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1})) / static_cast<double>(n);
    if ((frac >= 0.01 && frac <= 0.60) || attempt >= 1000) break;
  }

  std::normal_distribution<double> noise(0.0, spec.noise_stdev > 0.0 ? spec.noise_stdev : 1.0);
  std::vector<double> vox(n);
  for (std::size_t i = 0; i < n; ++i) {
    vox[i] = spec.contrast * labels[i];
    if (spec.noise_stdev > 0.0) vox[i] += noise(rng);
  }
  return {Volume(d, spec.spacing, std::move(vox)), Mask(d, std::move(labels))};
}

AugmentParams draw_augment_params(const Dims& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 8.0, std::numbers::pi / 8.0);
  AugmentParams p;
  for (int a = 0; a < 3; ++a) p.flip[a] = coin(rng);
  for (int a = 0; a < 3; ++a) {
    const double draw = angle(rng);
    // rotation about axis a mixes the other two axes; both must span more than one voxel
    const int u = (a + 1) % 3, w = (a + 2) % 3;
    p.angle[a] = (dims.extent(u) > 1 && dims.extent(w) > 1) ? draw : 0.0;
  }
  return p;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

// Rotation about axis a in (z, y, x) coordinates.
Mat3 axis_rotation(int a, double t) {
  Mat3 r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const int u = (a + 1) % 3, w = (a + 2) % 3;
  const double c = std::cos(t), s = std::sin(t);
  r[u][u] = c;
  r[u][w] = -s;
  r[w][u] = s;
  r[w][w] = c;
  return r;
}

}  // namespace

std::pair<Volume, Mask> augment(const Volume& v, const Mask& m, const AugmentParams& params) {
  if (!(v.dims() == m.dims())) throw std::invalid_argument("volume/mask dims mismatch");
  const Dims& d = v.dims();
  const Spacing& sp = v.spacing();
  const std::size_t n = d.count();

  // flips
  std::vector<double> fv(n);
  std::vector<std::uint8_t> fm(n);
  for (std::size_t i = 0; i < n; ++i) {
    Index3 p = unflatten(d, i);
    if (params.flip[0]) p.z = d.depth - 1 - p.z;
    if (params.flip[1]) p.y = d.height - 1 - p.y;
    if (params.flip[2]) p.x = d.width - 1 - p.x;
    const std::size_t src = flat_index(d, p);
    fv[i] = v[src];
    fm[i] = m[src];
  }
  if (params.angle[0] == 0.0 && params.angle[1] == 0.0 && params.angle[2] == 0.0) {
    return {Volume(d, sp, std::move(fv)), Mask(d, std::move(fm))};
  }

  // Rotate about the grid centre in physical space; output voxel p samples R^T (p - c) + c.
  const Mat3 rot = mul(axis_rotation(0, params.angle[0]), mul(axis_rotation(1, params.angle[1]),
                                                               axis_rotation(2, params.angle[2])));
  const double scale[3] = {sp.z, sp.y, sp.x};
  const double center[3] = {(d.depth - 1) / 2.0, (d.height - 1) / 2.0, (d.width - 1) / 2.0};
  const double fill = *std::min_element(fv.begin(), fv.end());

  std::vector<double> ov(n);
  std::vector<std::uint8_t> om(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Index3 p = unflatten(d, i);
    const double rel[3] = {(p.z - center[0]) * scale[0], (p.y - center[1]) * scale[1],
                           (p.x - center[2]) * scale[2]};
    double src[3];
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += rot[k][a] * rel[k];  // transpose = inverse
      src[a] = acc / scale[a] + center[a];
      if (src[a] < -1e-9 || src[a] > d.extent(a) - 1 + 1e-9) inside = false;
    }
    if (!inside) {
      ov[i] = fill;
      om[i] = 0;
      continue;
    }
    int base[3];
    double frac[3];
    int near[3];
    for (int a = 0; a < 3; ++a) {
      const double c = std::clamp(src[a], 0.0, static_cast<double>(d.extent(a) - 1));
      base[a] = std::min(static_cast<int>(std::floor(c)), d.extent(a) - 1);
      frac[a] = c - base[a];
      near[a] = std::clamp(static_cast<int>(std::lround(c)), 0, d.extent(a) - 1);
    }
    double acc = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      double w = 1.0;
      Index3 q{};
      int* qa[3] = {&q.z, &q.y, &q.x};
      for (int a = 0; a < 3; ++a) {
        const int hi = (corner >> a) & 1;
        w *= hi ? frac[a] : 1.0 - frac[a];
        *qa[a] = std::min(base[a] + hi, d.extent(a) - 1);
      }
      if (w != 0.0) acc += w * fv[flat_index(d, q)];
    }
    ov[i] = acc;
    om[i] = fm[flat_index(d, {near[0], near[1], near[2]})];
  }
  return {Volume(d, sp, std::move(ov)), Mask(d, std::move(om))};
}

std::pair<Volume, Mask> augment(const Volume& v, const Mask& m, std::uint64_t seed) {
  return augment(v, m, draw_augment_params(v.dims(), seed));
}

Mask threshold(std::span<const double> prob, const Dims& dims) {
  std::vector<std::uint8_t> labels(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) labels[i] = prob[i] > 0.5 ? 1 : 0;
  return Mask(dims, std::move(labels));
}

}  // namespace iris
