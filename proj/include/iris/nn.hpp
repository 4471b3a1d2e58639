#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "iris/grid.hpp"

namespace iris::nn {

/// Dense (channels, depth, height, width) array.
template <typename T>
struct Tensor {
  int channels = 0;
  Dims dims;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, Dims d, T fill = T(0)) : channels(c), dims(d), data(static_cast<std::size_t>(c) * d.count(), fill) {}

  std::size_t voxels() const { return dims.count(); }
  T* channel(int c) { return data.data() + static_cast<std::size_t>(c) * voxels(); }
  const T* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * voxels(); }
};

/// Architecture hyperparameters. Kernel depth 1 gives 1x3x3 kernels for flat volumes.
struct ArchSpec {
  int in_channels = 4;
  int channels = 16;
  int actions = 6;
  int kernel_depth = 3;
  std::array<int, 3> trunk_dilations{1, 2, 4};
  std::array<int, 3> branch_dilations{1, 2, 4};

  bool operator==(const ArchSpec&) const = default;
};

struct ConvShape {
  int in = 0;
  int out = 0;
  int kd = 1, kh = 1, kw = 1;
  int dilation = 1;

  int taps() const { return kd * kh * kw; }
  std::size_t weight_count() const { return static_cast<std::size_t>(out) * in * taps(); }
};

/// Layer order: trunk[0..2], policy[0..2], policy head, value[0..2], value head.
enum Layer : int {
  kTrunk0 = 0,
  kTrunk1,
  kTrunk2,
  kPolicy0,
  kPolicy1,
  kPolicy2,
  kPolicyHead,
  kValue0,
  kValue1,
  kValue2,
  kValueHead,
  kLayerCount
};

struct LayerSlot {
  ConvShape shape;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

struct ParamLayout {
  ArchSpec arch;
  std::array<LayerSlot, kLayerCount> layers{};
  std::size_t total = 0;
};

ParamLayout make_layout(const ArchSpec& arch);

/// All trainable parameters in one contiguous buffer ordered by `layout`.
template <typename T>
struct NetworkParams {
  ParamLayout layout;
  std::vector<T> values;

  std::size_t count() const { return values.size(); }
  std::span<T> weights(int layer) {
    const auto& s = layout.layers[layer];
    return {values.data() + s.weight_offset, s.shape.weight_count()};
  }
  std::span<const T> weights(int layer) const {
    const auto& s = layout.layers[layer];
    return {values.data() + s.weight_offset, s.shape.weight_count()};
  }
  std::span<T> bias(int layer) {
    const auto& s = layout.layers[layer];
    return {values.data() + s.bias_offset, static_cast<std::size_t>(s.shape.out)};
  }
};

/// He-style fan-in scaled normal weights, zero biases.
template <typename T>
NetworkParams<T> init_params(const ArchSpec& arch, std::uint64_t seed);

template <typename To, typename From>
NetworkParams<To> convert(const NetworkParams<From>& p) {
  NetworkParams<To> out{p.layout, std::vector<To>(p.values.begin(), p.values.end())};
  return out;
}

/// Zero both 1x1 heads (uniform policy, zero value).
template <typename T>
void zero_heads(NetworkParams<T>& p);

template <typename T>
struct ActorCriticOutput {
  Tensor<T> policy;  // K channels, sums to 1 per voxel
  Tensor<T> value;   // 1 channel
};

/// Activations kept for the backward pass.
template <typename T>
struct ForwardCache {
  Tensor<T> input;
  std::array<Tensor<T>, 3> trunk;
  Tensor<T> policy_feats;  // 3C channels: concat of the three branch blocks
  Tensor<T> value_feats;
  ActorCriticOutput<T> out;
};

template <typename T>
ActorCriticOutput<T> forward(const NetworkParams<T>& params, const Tensor<T>& state, ForwardCache<T>* cache = nullptr);

struct BackwardTerms {
  bool policy = true;
  bool value = true;
  double value_coef = 1.0;
  double entropy_coef = 0.0;
};

struct LossValues {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;  // mean per-voxel policy entropy
};

/// Accumulates into `grad` the gradient of
///   -(1/N) sum log pi(a_i|s_i) A_i  +  value_coef (1/N) sum (R_i - V_i)^2  -  entropy_coef * mean entropy
/// with A held constant. Requires the cache from a forward pass with the same params.
template <typename T>
LossValues backward(const NetworkParams<T>& params, const ForwardCache<T>& cache, std::span<const std::uint8_t> actions,
                    std::span<const T> advantage, std::span<const T> returns, std::span<T> grad,
                    const BackwardTerms& terms = {});

/// Loss evaluated from a forward pass only (used by finite-difference checks).
template <typename T>
LossValues loss_only(const ActorCriticOutput<T>& out, std::span<const std::uint8_t> actions,
                     std::span<const T> advantage, std::span<const T> returns, const BackwardTerms& terms = {});

/// Checkpoint: "IRISNET1 {json}\n" header followed by little-endian f32 parameters.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};
void save_checkpoint(const std::filesystem::path& path, const NetworkParams<float>& params, const CheckpointMeta& meta);
NetworkParams<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
std::string encode_checkpoint(const NetworkParams<float>& params, const CheckpointMeta& meta);
NetworkParams<float> decode_checkpoint(std::string_view bytes, CheckpointMeta* meta = nullptr);

/// Greedy or sampled action per voxel.
template <typename T>
std::vector<std::uint8_t> argmax_actions(const Tensor<T>& policy);

}  // namespace iris::nn
