#include "iris/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace iris::nn {

ParamLayout make_layout(const ArchSpec& arch) {
  if (arch.channels < 1) throw std::invalid_argument("channel width must be >= 1");
  if (arch.actions < 1) throw std::invalid_argument("action count must be >= 1");
  if (arch.kernel_depth != 1 && arch.kernel_depth != 3) throw std::invalid_argument("kernel depth must be 1 or 3");
  ParamLayout layout;
  layout.arch = arch;
  const int C = arch.channels;
  auto conv3 = [&](int in, int out, int dil) { return ConvShape{in, out, arch.kernel_depth, 3, 3, dil}; };
  auto& L = layout.layers;
  L[kTrunk0].shape = conv3(arch.in_channels, C, arch.trunk_dilations[0]);
  L[kTrunk1].shape = conv3(C, C, arch.trunk_dilations[1]);
  L[kTrunk2].shape = conv3(C, C, arch.trunk_dilations[2]);
  for (int b = 0; b < 2; ++b) {
    const int base = b == 0 ? kPolicy0 : kValue0;
    for (int k = 0; k < 3; ++k) L[base + k].shape = conv3(C, C, arch.branch_dilations[k]);
  }
  L[kPolicyHead].shape = ConvShape{3 * C, arch.actions, 1, 1, 1, 1};
  L[kValueHead].shape = ConvShape{3 * C, 1, 1, 1, 1, 1};
  std::size_t off = 0;
  for (auto& s : L) {
    s.weight_offset = off;
    off += s.shape.weight_count();
    s.bias_offset = off;
    off += static_cast<std::size_t>(s.shape.out);
  }
  layout.total = off;
  return layout;
}

template <typename T>
NetworkParams<T> init_params(const ArchSpec& arch, std::uint64_t seed) {
  NetworkParams<T> p{make_layout(arch), {}};
  p.values.assign(p.layout.total, T(0));
  std::mt19937_64 rng(seed);
  for (int l = 0; l < kLayerCount; ++l) {
    const auto& s = p.layout.layers[l].shape;
    const double fan_in = static_cast<double>(s.in) * s.taps();
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : p.weights(l)) w = static_cast<T>(dist(rng));
  }
  return p;
}

template <typename T>
void zero_heads(NetworkParams<T>& p) {
  for (int l : {int(kPolicyHead), int(kValueHead)}) {
    std::fill(p.weights(l).begin(), p.weights(l).end(), T(0));
    std::fill(p.bias(l).begin(), p.bias(l).end(), T(0));
  }
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tap {
  int dz, dy, dx;
};

std::vector<Tap> taps_of(const ConvShape& s) {
  std::vector<Tap> t;
  for (int z = 0; z < s.kd; ++z)
    for (int y = 0; y < s.kh; ++y)
      for (int x = 0; x < s.kw; ++x)
        t.push_back({(z - s.kd / 2) * s.dilation, (y - s.kh / 2) * s.dilation, (x - s.kw / 2) * s.dilation});
  return t;
}

// col[(c * taps + t), voxel] = x[c, voxel + tap_t] (zero outside the grid)
template <typename T>
void im2col(const T* x, int cin, const Dims& d, const ConvShape& s, T* col) {
  const std::size_t n = d.count();
  const auto taps = taps_of(s);
  for (int c = 0; c < cin; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * n;
    for (std::size_t t = 0; t < taps.size(); ++t) {
      T* row = col + (static_cast<std::size_t>(c) * taps.size() + t) * n;
      const Tap tp = taps[t];
      const int x0 = std::max(0, -tp.dx), x1 = std::min(d.width, d.width - tp.dx);
      for (int z = 0; z < d.depth; ++z) {
        const int sz = z + tp.dz;
        for (int y = 0; y < d.height; ++y) {
          T* dst = row + (static_cast<std::size_t>(z) * d.height + y) * d.width;
          const int sy = y + tp.dy;
          if (sz < 0 || sz >= d.depth || sy < 0 || sy >= d.height || x1 <= x0) {
            std::fill(dst, dst + d.width, T(0));
            continue;
          }
          const T* src = xc + (static_cast<std::size_t>(sz) * d.height + sy) * d.width + tp.dx;
          std::fill(dst, dst + x0, T(0));
          std::copy(src + x0, src + x1, dst + x0);
          std::fill(dst + x1, dst + d.width, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: dx[c, voxel + tap] += dcol[(c, tap), voxel]
template <typename T>
void col2im_add(const T* dcol, int cin, const Dims& d, const ConvShape& s, T* dx) {
  const std::size_t n = d.count();
  const auto taps = taps_of(s);
  for (int c = 0; c < cin; ++c) {
    T* xc = dx + static_cast<std::size_t>(c) * n;
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const T* row = dcol + (static_cast<std::size_t>(c) * taps.size() + t) * n;
      const Tap tp = taps[t];
      const int x0 = std::max(0, -tp.dx), x1 = std::min(d.width, d.width - tp.dx);
      if (x1 <= x0) continue;
      for (int z = 0; z < d.depth; ++z) {
        const int sz = z + tp.dz;
        if (sz < 0 || sz >= d.depth) continue;
        for (int y = 0; y < d.height; ++y) {
          const int sy = y + tp.dy;
          if (sy < 0 || sy >= d.height) continue;
          const T* src = row + (static_cast<std::size_t>(z) * d.height + y) * d.width;
          T* dst = xc + (static_cast<std::size_t>(sz) * d.height + sy) * d.width + tp.dx;
          for (int x = x0; x < x1; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

// y = W * im2col(x) + b, optionally followed by ReLU.
template <typename T>
void conv_forward(const NetworkParams<T>& params, int layer, const T* x, const Dims& d, T* y, bool relu) {
  const auto& slot = params.layout.layers[layer];
  const ConvShape& s = slot.shape;
  const auto n = static_cast<Eigen::Index>(d.count());
  const auto rows = static_cast<Eigen::Index>(s.in) * s.taps();
  const T* colp = x;
  if (s.taps() > 1) {
    auto& col = scratch<T>();
    col.resize(static_cast<std::size_t>(rows) * n);
    im2col(x, s.in, d, s, col.data());
    colp = col.data();
  }
  Eigen::Map<const RowMat<T>> W(params.values.data() + slot.weight_offset, s.out, rows);
  Eigen::Map<const RowMat<T>> C(colp, rows, n);
  Eigen::Map<RowMat<T>> Y(y, s.out, n);
  // Single-row products go through Eigen's GEMV, whose summation order depends on pointer alignment,
  // so those are done by hand to keep training bit-reproducible.
  if (s.out == 1) {
    std::fill(y, y + n, T(0));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const T w = W(0, r);
      const T* cr = colp + static_cast<std::size_t>(r) * n;
      for (Eigen::Index i = 0; i < n; ++i) y[i] += w * cr[i];
    }
  } else {
    Y.noalias() = W * C;
  }
  const T* b = params.values.data() + slot.bias_offset;
  for (int o = 0; o < s.out; ++o) {
    T* yo = y + static_cast<std::size_t>(o) * n;
    const T bo = b[o];
    if (relu) {
      for (Eigen::Index i = 0; i < n; ++i) yo[i] = std::max(yo[i] + bo, T(0));
    } else {
      for (Eigen::Index i = 0; i < n; ++i) yo[i] += bo;
    }
  }
}

// Given dY (already masked by the ReLU derivative), accumulate dW, db and dX.
template <typename T>
void conv_backward(const NetworkParams<T>& params, int layer, const T* x, const Dims& d, const T* dy, T* grad,
                   T* dx) {
  const auto& slot = params.layout.layers[layer];
  const ConvShape& s = slot.shape;
  const auto n = static_cast<Eigen::Index>(d.count());
  const auto rows = static_cast<Eigen::Index>(s.in) * s.taps();
  auto& col = scratch<T>();
  const T* colp = x;
  if (s.taps() > 1) {
    col.resize(static_cast<std::size_t>(rows) * n);
    im2col(x, s.in, d, s, col.data());
    colp = col.data();
  }
  Eigen::Map<const RowMat<T>> C(colp, rows, n);
  Eigen::Map<const RowMat<T>> dY(dy, s.out, n);
  Eigen::Map<RowMat<T>> dW(grad + slot.weight_offset, s.out, rows);
  if (s.out == 1) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const T* cr = colp + static_cast<std::size_t>(r) * n;
      T acc = 0;
      for (Eigen::Index i = 0; i < n; ++i) acc += dy[i] * cr[i];
      dW(0, r) += acc;
    }
  } else {
    dW.noalias() += dY * C.transpose();
  }
  for (int o = 0; o < s.out; ++o) {
    const T* dyo = dy + static_cast<std::size_t>(o) * n;
    T acc = 0;
    for (Eigen::Index i = 0; i < n; ++i) acc += dyo[i];
    grad[slot.bias_offset + o] += acc;
  }
  if (!dx) return;
  Eigen::Map<const RowMat<T>> W(params.values.data() + slot.weight_offset, s.out, rows);
  if (s.taps() == 1) {
    Eigen::Map<RowMat<T>> dX(dx, rows, n);
    dX.noalias() += W.transpose() * dY;
    return;
  }
  thread_local std::vector<T> dcol_buf;
  dcol_buf.resize(static_cast<std::size_t>(rows) * n);
  Eigen::Map<RowMat<T>> dC(dcol_buf.data(), rows, n);
  dC.noalias() = W.transpose() * dY;
  col2im_add(dcol_buf.data(), s.in, d, s, dx);
}

template <typename T>
void relu_mask(const T* act, T* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(act[i] > T(0))) g[i] = T(0);
}

}  // namespace

template <typename T>
ActorCriticOutput<T> forward(const NetworkParams<T>& params, const Tensor<T>& state, ForwardCache<T>* cache) {
  const ArchSpec& arch = params.layout.arch;
  if (state.channels != arch.in_channels)
    throw std::invalid_argument("forward: expected " + std::to_string(arch.in_channels) + " input channels, got " +
                                std::to_string(state.channels));
  const Dims d = state.dims;
  const int C = arch.channels;
  const std::size_t n = d.count();

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.input = state;
  const T* prev = c.input.data.data();
  for (int k = 0; k < 3; ++k) {
    c.trunk[k] = Tensor<T>(C, d);
    conv_forward(params, kTrunk0 + k, prev, d, c.trunk[k].data.data(), true);
    prev = c.trunk[k].data.data();
  }
  for (int b = 0; b < 2; ++b) {
    Tensor<T>& feats = b == 0 ? c.policy_feats : c.value_feats;
    feats = Tensor<T>(3 * C, d);
    const int base = b == 0 ? kPolicy0 : kValue0;
    const T* in = c.trunk[2].data.data();
    for (int k = 0; k < 3; ++k) {
      T* out = feats.channel(k * C);
      conv_forward(params, base + k, in, d, out, true);
      in = out;
    }
  }

  ActorCriticOutput<T> out;
  out.policy = Tensor<T>(arch.actions, d);
  out.value = Tensor<T>(1, d);
  conv_forward(params, kPolicyHead, c.policy_feats.data.data(), d, out.policy.data.data(), false);
  conv_forward(params, kValueHead, c.value_feats.data.data(), d, out.value.data.data(), false);

  // per-voxel softmax over the K action channels
  const int K = arch.actions;
  for (std::size_t i = 0; i < n; ++i) {
    T m = out.policy.data[i];
    for (int k = 1; k < K; ++k) m = std::max(m, out.policy.data[k * n + i]);
    T sum = 0;
    for (int k = 0; k < K; ++k) {
      T& v = out.policy.data[k * n + i];
      v = std::exp(v - m);
      sum += v;
    }
    for (int k = 0; k < K; ++k) out.policy.data[k * n + i] /= sum;
  }
  if (cache) c.out = out;
  return out;
}

template <typename T>
LossValues loss_only(const ActorCriticOutput<T>& out, std::span<const std::uint8_t> actions,
                     std::span<const T> advantage, std::span<const T> returns, const BackwardTerms& terms) {
  const std::size_t n = out.value.voxels();
  const int K = out.policy.channels;
  LossValues lv;
  for (std::size_t i = 0; i < n; ++i) {
    if (terms.policy) lv.policy_loss -= std::log(static_cast<double>(out.policy.data[actions[i] * n + i])) * advantage[i];
    const double r = static_cast<double>(returns[i]) - static_cast<double>(out.value.data[i]);
    if (terms.value) lv.value_loss += r * r;
    double h = 0.0;
    for (int k = 0; k < K; ++k) {
      const double p = out.policy.data[k * n + i];
      if (p > 0) h -= p * std::log(p);
    }
    lv.entropy += h;
  }
  lv.policy_loss /= static_cast<double>(n);
  lv.value_loss /= static_cast<double>(n);
  lv.entropy /= static_cast<double>(n);
  return lv;
}

template <typename T>
LossValues backward(const NetworkParams<T>& params, const ForwardCache<T>& cache, std::span<const std::uint8_t> actions,
                    std::span<const T> advantage, std::span<const T> returns, std::span<T> grad,
                    const BackwardTerms& terms) {
  const ArchSpec& arch = params.layout.arch;
  const Dims d = cache.input.dims;
  const std::size_t n = d.count();
  const int C = arch.channels;
  const int K = arch.actions;
  if (cache.out.policy.data.empty()) throw std::logic_error("backward: missing forward cache");
  if (actions.size() != n || advantage.size() != n || returns.size() != n)
    throw std::invalid_argument("backward: field size mismatch");
  if (grad.size() != params.count()) throw std::invalid_argument("backward: gradient buffer size mismatch");

  const LossValues lv = loss_only(cache.out, actions, advantage, returns, terms);
  const T inv_n = T(1) / static_cast<T>(n);

  // d loss / d logits
  Tensor<T> dlogits(K, d);
  const auto& pi = cache.out.policy.data;
  for (std::size_t i = 0; i < n; ++i) {
    if (actions[i] >= K) throw std::out_of_range("backward: action index out of range");
    double h = 0.0;
    if (terms.entropy_coef != 0.0)
      for (int k = 0; k < K; ++k) {
        const double p = pi[k * n + i];
        if (p > 0) h -= p * std::log(p);
      }
    for (int k = 0; k < K; ++k) {
      const T p = pi[k * n + i];
      T g = 0;
      if (terms.policy) g -= advantage[i] * ((k == actions[i] ? T(1) : T(0)) - p);
      if (terms.entropy_coef != 0.0 && p > 0)
        g += static_cast<T>(terms.entropy_coef * p * (std::log(static_cast<double>(p)) + h));
      dlogits.data[k * n + i] = g * inv_n;
    }
  }
  Tensor<T> dvalue(1, d);
  if (terms.value)
    for (std::size_t i = 0; i < n; ++i)
      dvalue.data[i] = static_cast<T>(-2.0 * terms.value_coef) * (returns[i] - cache.out.value.data[i]) * inv_n;

  T* g = grad.data();
  Tensor<T> dtrunk_out(C, d);
  for (int b = 0; b < 2; ++b) {
    const Tensor<T>& feats = b == 0 ? cache.policy_feats : cache.value_feats;
    const Tensor<T>& dhead = b == 0 ? dlogits : dvalue;
    const int head = b == 0 ? kPolicyHead : kValueHead;
    const int base = b == 0 ? kPolicy0 : kValue0;
    Tensor<T> dfeats(3 * C, d);
    conv_backward(params, head, feats.data.data(), d, dhead.data.data(), g, dfeats.data.data());
    for (int k = 2; k >= 0; --k) {
      T* dk = dfeats.channel(k * C);
      relu_mask(feats.channel(k * C), dk, static_cast<std::size_t>(C) * n);
      const T* in = k == 0 ? cache.trunk[2].data.data() : feats.channel((k - 1) * C);
      T* din = k == 0 ? dtrunk_out.data.data() : dfeats.channel((k - 1) * C);
      conv_backward(params, base + k, in, d, dk, g, din);
    }
  }
  Tensor<T> dcur = std::move(dtrunk_out);
  for (int k = 2; k >= 0; --k) {
    relu_mask(cache.trunk[k].data.data(), dcur.data.data(), dcur.data.size());
    const T* in = k == 0 ? cache.input.data.data() : cache.trunk[k - 1].data.data();
    if (k == 0) {
      conv_backward<T>(params, kTrunk0, in, d, dcur.data.data(), g, nullptr);
    } else {
      Tensor<T> dprev(C, d);
      conv_backward(params, kTrunk0 + k, in, d, dcur.data.data(), g, dprev.data.data());
      dcur = std::move(dprev);
    }
  }
  return lv;
}

template <typename T>
std::vector<std::uint8_t> argmax_actions(const Tensor<T>& policy) {
  const std::size_t n = policy.voxels();
  std::vector<std::uint8_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int k = 1; k < policy.channels; ++k)
      if (policy.data[k * n + i] > policy.data[best * n + i]) best = k;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// Checkpoints -------------------------------------------------------------------

namespace {

nlohmann::json arch_to_json(const ArchSpec& a) {
  return {{"in_channels", a.in_channels},
          {"channels", a.channels},
          {"actions", a.actions},
          {"kernel_depth", a.kernel_depth},
          {"trunk_dilations", a.trunk_dilations},
          {"branch_dilations", a.branch_dilations}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  a.in_channels = j.at("in_channels").get<int>();
  a.channels = j.at("channels").get<int>();
  a.actions = j.at("actions").get<int>();
  a.kernel_depth = j.at("kernel_depth").get<int>();
  a.trunk_dilations = j.at("trunk_dilations").get<std::array<int, 3>>();
  a.branch_dilations = j.at("branch_dilations").get<std::array<int, 3>>();
  return a;
}

}  // namespace

std::string encode_checkpoint(const NetworkParams<float>& params, const CheckpointMeta& meta) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  nlohmann::json h{{"arch", arch_to_json(params.layout.arch)},
                   {"seed", meta.seed},
                   {"step", meta.step},
                   {"dtype", "f32"},
                   {"param_count", params.count()}};
  std::string out = "IRISNET1 " + h.dump() + "\n";
  const std::size_t off = out.size();
  out.resize(off + params.count() * sizeof(float));
  std::memcpy(out.data() + off, params.values.data(), params.count() * sizeof(float));
  return out;
}

NetworkParams<float> decode_checkpoint(std::string_view bytes, CheckpointMeta* meta) {
  const auto nl = bytes.find('\n');
  constexpr std::string_view magic = "IRISNET1 ";
  if (nl == std::string_view::npos || bytes.substr(0, magic.size()) != magic)
    throw std::runtime_error("malformed checkpoint header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(magic.size(), nl - magic.size()));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint header: ") + e.what());
  }
  NetworkParams<float> p{make_layout(arch_from_json(h.at("arch"))), {}};
  if (h.at("param_count").get<std::size_t>() != p.layout.total)
    throw std::runtime_error("checkpoint parameter count does not match architecture");
  const std::string_view payload = bytes.substr(nl + 1);
  if (payload.size() != p.layout.total * sizeof(float)) throw std::runtime_error("checkpoint payload length mismatch");
  p.values.resize(p.layout.total);
  std::memcpy(p.values.data(), payload.data(), payload.size());
  if (meta) {
    meta->seed = h.value("seed", std::uint64_t{0});
    meta->step = h.value("step", std::uint64_t{0});
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkParams<float>& params, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const auto bytes = encode_checkpoint(params, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NetworkParams<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), meta);
}

#define IRIS_NN_INSTANTIATE(T)                                                                                        \
  template NetworkParams<T> init_params<T>(const ArchSpec&, std::uint64_t);                                          \
  template void zero_heads<T>(NetworkParams<T>&);                                                                     \
  template ActorCriticOutput<T> forward<T>(const NetworkParams<T>&, const Tensor<T>&, ForwardCache<T>*);              \
  template LossValues backward<T>(const NetworkParams<T>&, const ForwardCache<T>&, std::span<const std::uint8_t>,     \
                                  std::span<const T>, std::span<const T>, std::span<T>, const BackwardTerms&);        \
  template LossValues loss_only<T>(const ActorCriticOutput<T>&, std::span<const std::uint8_t>, std::span<const T>,    \
                                   std::span<const T>, const BackwardTerms&);                                         \
  template std::vector<std::uint8_t> argmax_actions<T>(const Tensor<T>&);

IRIS_NN_INSTANTIATE(float)
IRIS_NN_INSTANTIATE(double)

}  // namespace iris::nn
