#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "iris/volume.hpp"

using namespace iris;

namespace {

std::string ivol_bytes(const std::string& header_json, std::size_t floats) {
  std::string s = "IVOL1 " + header_json + "\n";
  s.append(floats * sizeof(float), '\0');
  return s;
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double pstdev(std::span<const double> v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

}  // namespace

TEST_CASE("ivol header with dims (1,4,4) and 16 floats decodes to 16 voxels") {
  const auto bytes = ivol_bytes(R"({"dims":[1,4,4],"dtype":"f32","spacing":[1,1,1]})", 16);
  const Volume v = decode_volume(bytes);
  CHECK(v.size() == 16);
  CHECK(v.dims() == Dims{1, 4, 4});
}

TEST_CASE("payload of 15 floats for dims (1,4,4) is a length mismatch") {
  const auto bytes = ivol_bytes(R"({"dims":[1,4,4],"dtype":"f32","spacing":[1,1,1]})", 15);
  CHECK_THROWS_WITH_AS(decode_volume(bytes), doctest::Contains("payload length mismatch"), FormatError);
}

TEST_CASE("malformed headers and non-positive geometry are rejected") {
  CHECK_THROWS_AS(decode_volume("NOPE {}\n"), FormatError);
  CHECK_THROWS_AS(decode_volume("IVOL1 {not json\n"), FormatError);
  CHECK_THROWS_AS(decode_volume(ivol_bytes(R"({"dims":[0,4,4],"dtype":"f32","spacing":[1,1,1]})", 0)), FormatError);
  CHECK_THROWS_AS(decode_volume(ivol_bytes(R"({"dims":[1,2,2],"dtype":"f32","spacing":[1,-1,1]})", 4)),
                  FormatError);
  CHECK_THROWS_AS(decode_volume(ivol_bytes(R"({"dims":[1,2,2],"dtype":"f64","spacing":[1,1,1]})", 4)), FormatError);
}

TEST_CASE("save then load is bitwise identical for f32 volumes and u8 masks") {
  const auto dir = std::filesystem::temp_directory_path() / "iris_volume_test";
  std::filesystem::create_directories(dir);
  std::vector<double> vox(2 * 3 * 5);
  for (std::size_t i = 0; i < vox.size(); ++i) vox[i] = static_cast<float>(std::sin(i * 1.7) * 100.0);
  const Volume v({2, 3, 5}, {0.5, 1.25, 2.0}, vox);
  save_volume(dir / "v.ivol", v);
  const Volume back = load_volume(dir / "v.ivol");
  CHECK(back.dims() == v.dims());
  CHECK(back.spacing() == v.spacing());
  CHECK(std::memcmp(back.voxels().data(), v.voxels().data(), vox.size() * sizeof(double)) == 0);

  std::vector<std::uint8_t> lab(30);
  for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = (i * 7) % 3 == 0;
  const Mask m({2, 3, 5}, lab);
  save_mask(dir / "m.ivol", m, v.spacing());
  CHECK(load_mask(dir / "m.ivol") == m);
  CHECK(encode_ivol(decode_mask(encode_ivol(m, v.spacing())).first, v.spacing()) == encode_ivol(m, v.spacing()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("ivol header keys are sorted and the payload is little-endian") {
  const Volume v({1, 1, 2}, {}, std::vector<double>{1.0, -2.0});
  const std::string bytes = encode_ivol(v);
  const auto nl = bytes.find('\n');
  CHECK(bytes.substr(0, nl) == R"(IVOL1 {"dims":[1,1,2],"dtype":"f32","spacing":[1.0,1.0,1.0]})");
  float first;
  std::memcpy(&first, bytes.data() + nl + 1, 4);
  CHECK(first == 1.0f);
  CHECK(static_cast<unsigned char>(bytes[nl + 1 + 3]) == 0x3F);  // LE high byte of 1.0f
}

TEST_CASE("mask values must be binary") {
  CHECK_THROWS(Mask({1, 1, 2}, std::vector<std::uint8_t>{0, 2}));
  const std::string u8 = "IVOL1 {\"dims\":[1,1,2],\"dtype\":\"u8\",\"spacing\":[1,1,1]}\n" + std::string("\x00\x05", 2);
  CHECK_THROWS_AS(decode_mask(u8), FormatError);
}

TEST_CASE("normalize gives zero mean and unit population stdev") {
  const Volume v({1, 1, 4}, {}, std::vector<double>{1, 2, 3, 4});
  const Volume n = normalize(v);
  CHECK(std::abs(mean(n.voxels())) < 1e-12);
  CHECK(pstdev(n.voxels()) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(n[0] == doctest::Approx(-1.5 / std::sqrt(1.25)));
}

TEST_CASE("normalize maps a constant volume to zeros") {
  const Volume n = normalize(Volume({1, 1, 3}, {}, std::vector<double>{5, 5, 5}));
  for (double x : n.voxels()) CHECK(x == 0.0);
}

TEST_CASE("normalize is idempotent within 1e-12") {
  SynthSpec s;
  s.seed = 4;
  const Volume once = normalize(generate_synthetic(s).first);
  const Volume twice = normalize(once);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(std::abs(once[i] - twice[i]) < 1e-12);
}

TEST_CASE("synthetic generation is deterministic per seed") {
  SynthSpec s;
  s.seed = 11;
  const auto a = generate_synthetic(s);
  const auto b = generate_synthetic(s);
  CHECK(a.second == b.second);
  CHECK(std::equal(a.first.voxels().begin(), a.first.voxels().end(), b.first.voxels().begin()));
  s.seed = 12;
  CHECK_FALSE(generate_synthetic(s).second == a.second);
}

TEST_CASE("noise-free synthetic volume with contrast 1 equals its mask") {
  SynthSpec s;
  s.seed = 3;
  s.noise_stdev = 0.0;
  s.contrast = 1.0;
  const auto [v, m] = generate_synthetic(s);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == static_cast<double>(m[i]));
}

TEST_CASE("100 synthetic masks at dims (8,32,32) keep foreground fraction in [0.01, 0.60]") {
  SynthSpec s;
  s.dims = {8, 32, 32};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    s.seed = seed;
    const Mask m = generate_synthetic(s).second;
    const double frac = static_cast<double>(m.count()) / m.size();
    CHECK(frac >= 0.01);
    CHECK(frac <= 0.60);
  }
}

TEST_CASE("augment with zero angles and no flips is the identity") {
  SynthSpec s;
  s.seed = 9;
  s.dims = {4, 16, 16};
  const auto [v, m] = generate_synthetic(s);
  const auto [v2, m2] = augment(v, m, AugmentParams{});
  CHECK(m2 == m);
  CHECK(std::equal(v.voxels().begin(), v.voxels().end(), v2.voxels().begin()));
}

TEST_CASE("flipping the same axis twice is the identity") {
  SynthSpec s;
  s.seed = 10;
  s.dims = {3, 8, 9};
  const auto [v, m] = generate_synthetic(s);
  for (int axis = 0; axis < 3; ++axis) {
    AugmentParams p;
    p.flip[axis] = true;
    const auto once = augment(v, m, p);
    const auto twice = augment(once.first, once.second, p);
    CHECK(twice.second == m);
    CHECK(std::equal(v.voxels().begin(), v.voxels().end(), twice.first.voxels().begin()));
  }
}

TEST_CASE("augmented masks stay binary and keep foreground within 20% over 100 seeds") {
  SynthSpec s;
  s.dims = {1, 48, 48};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    s.seed = seed;
    const auto [v, m] = generate_synthetic(s);
    if (m.count() * 2 >= m.size()) continue;
    const auto [v2, m2] = augment(v, m, seed + 1000);
    for (auto x : m2.labels()) CHECK((x == 0 || x == 1));
    const double ratio = static_cast<double>(m2.count()) / m.count();
    CHECK(ratio >= 0.8);
    CHECK(ratio <= 1.2);
  }
}

TEST_CASE("augment fills out-of-grid samples with the minimum intensity") {
  const Volume v({1, 9, 9}, {}, 1.0);
  Volume w = v;
  w[0] = -3.0;
  AugmentParams p;
  p.angle[0] = 0.35;
  const auto [v2, m2] = augment(w, Mask({1, 9, 9}, 0), p);
  double lo = 1e9;
  for (double x : v2.voxels()) lo = std::min(lo, x);
  CHECK(lo >= -3.0);
  CHECK(v2[0] == doctest::Approx(-3.0));  // corners rotate out of the grid
}

TEST_CASE("flat grids only rotate in-plane") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const AugmentParams p = draw_augment_params({1, 32, 32}, seed);
    CHECK(p.angle[1] == 0.0);
    CHECK(p.angle[2] == 0.0);
    CHECK(std::abs(p.angle[0]) <= M_PI / 8);
  }
}

TEST_CASE("threshold is strict at 0.5") {
  const std::vector<double> p{0.5, 0.5000001, 0.2, 1.0};
  const Mask m = threshold(p, {1, 1, 4});
  CHECK(m[0] == 0);
  CHECK(m[1] == 1);
  CHECK(m[2] == 0);
  CHECK(m[3] == 1);
}
