#pragma once

#include <span>
#include <vector>

#include "iris/volume.hpp"

namespace iris {

constexpr double kProbClamp = 1e-6;

/// Distance-to-boundary weights: g is the raw distance, t its negative min-max normalisation.
struct BoundaryWeightField {
  Dims dims;
  std::vector<double> g;
  std::vector<double> t;
  bool boundary_present = false;
};

enum class RewardForm {
  Relative,  // change between consecutive iterations
  Absolute,  // -chi + lambda * psi of the current iteration
};

struct RewardConfig {
  double lambda_boundary = 0.5;
  double gamma = 0.95;
  RewardForm form = RewardForm::Relative;
};

struct RewardField {
  std::vector<double> r_global;
  std::vector<double> r_boundary;
  std::vector<double> r_total;
};

BoundaryWeightField boundary_weights(const Mask& gt, const Spacing& spacing);

/// Per-voxel binary cross entropy with probabilities clamped to [delta, 1 - delta].
double cross_entropy(double p, std::uint8_t y);

/// +t where the thresholded prediction matches the label, -t otherwise.
std::vector<double> boundary_score(std::span<const double> p, const Mask& gt, const BoundaryWeightField& w);

std::vector<double> global_reward(std::span<const double> p_prev, std::span<const double> p_cur, const Mask& gt);
std::vector<double> boundary_reward(std::span<const double> p_prev, std::span<const double> p_cur, const Mask& gt,
                                    const BoundaryWeightField& w);

RewardField compute_reward(std::span<const double> p_prev, std::span<const double> p_cur, const Mask& gt,
                           const BoundaryWeightField& w, const RewardConfig& cfg);

/// Backward discounted recursion R = r + gamma * R from a terminal R = 0, over the per-step
/// total rewards. Returns the return at every step (front() is the episode return).
std::vector<std::vector<double>> discounted_returns(const std::vector<std::vector<double>>& totals, double gamma);

}  // namespace iris
