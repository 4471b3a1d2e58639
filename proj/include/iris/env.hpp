#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "iris/distfield.hpp"
#include "iris/interaction.hpp"
#include "iris/reward.hpp"
#include "iris/supervoxel.hpp"
#include "iris/volume.hpp"

namespace iris {

/// Ordered probability adjustments; action index k adds deltas[k].
struct ActionSpec {
  std::vector<double> deltas;

  int size() const { return static_cast<int>(deltas.size()); }
  /// {-m_n..-m_1, +m_1..+m_n} from positive magnitudes.
  static ActionSpec symmetric(const std::vector<double>& magnitudes);
};

ActionSpec default_action_spec();  // {±0.1, ±0.2, ±0.4}

struct SupervoxelPolicy {
  enum class Kind { Declining, Fixed };
  Kind kind = Kind::Declining;
  int fixed_count = 100;

  int region_count(int iteration) const;
};

struct EpisodeConfig {
  int T = 4;
  ActionSpec actions = default_action_spec();
  RewardConfig reward{};
  RobotConfig robot{};
  DistanceKind distance = Geodesic{};
  SlicConfig slic{};
  SupervoxelPolicy supervoxels{};
  ClickMode click_mode = ClickMode::Supervoxel;
  /// Interaction maps forced to zero (warm-up and the "no interaction" protocol).
  bool no_interaction = false;
  bool record_trace = true;
};

using ProbMap = std::vector<double>;
using ActionField = std::vector<std::uint8_t>;

/// Per-voxel state channels (v, p, h+, h-).
struct EnvState {
  Dims dims;
  std::span<const double> intensity;
  std::span<const double> probability;
  std::span<const double> h_plus;
  std::span<const double> h_minus;
};

struct TraceRecord {
  int iteration = 0;
  int region_request = 0;
  int region_count = 0;
  std::vector<Click> clicks;
  std::size_t object_hints = 0;
  std::size_t background_hints = 0;
  std::uint64_t state_hash = 0;
  ActionField actions;
  ProbMap probability;  // after the actions
  std::vector<double> h_plus;
  std::vector<double> h_minus;
  std::vector<std::int32_t> supervoxels;
  std::optional<RewardField> reward;
  std::optional<double> dsc;
};

struct EpisodeTrace {
  std::vector<TraceRecord> records;
};

/// One JSON object per iteration. `full` includes per-voxel arrays.
nlohmann::json trace_record_to_json(const TraceRecord& r, bool full);

/// Memoises SLIC labelings of one volume by requested region count. Thread-safe.
class LabelingCache {
 public:
  std::shared_ptr<const SupervoxelLabeling> get(const Volume& v, int region_count, const SlicConfig& cfg);

 private:
  std::mutex mu_;
  std::map<int, std::shared_ptr<const SupervoxelLabeling>> cache_;
};

ProbMap apply_actions(std::span<const double> p, std::span<const std::uint8_t> actions, const ActionSpec& spec);

struct StepResult {
  EnvState state;
  std::optional<RewardField> reward;
  bool done = false;
};

/// The interactive-segmentation MDP for one volume. Inference mode when gt is absent.
class Env {
 public:
  Env(Volume normalized, std::optional<Mask> gt, EpisodeConfig cfg,
      std::shared_ptr<LabelingCache> cache = nullptr);

  /// Robot-user interaction; requires ground truth.
  EnvState interact_robot();
  EnvState interact(const std::vector<Click>& clicks);
  StepResult step(std::span<const std::uint8_t> actions);

  /// Expands clicks into hints without rebuilding maps (service use). Returns counts added.
  ExpandResult add_clicks(const std::vector<Click>& clicks);
  /// Rebuilds the maps from the current hints.
  EnvState refresh_maps();

  EnvState state() const;
  const SupervoxelLabeling& labeling();
  const HintSet& hints() const { return hints_; }
  const ProbMap& probability() const { return p_; }
  Mask prediction() const { return threshold(p_, volume_.dims()); }
  const Volume& volume() const { return volume_; }
  const std::optional<Mask>& ground_truth() const { return gt_; }
  const EpisodeConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  bool done() const { return iteration_ >= cfg_.T; }
  const EpisodeTrace& trace() const { return trace_; }
  const std::vector<Click>& pending_clicks() const { return pending_clicks_; }
  const BoundaryWeightField& boundary() const { return weights_; }
  /// Lets the service continue refining past T.
  void extend_horizon(int extra) { cfg_.T += extra; }

 private:
  Volume volume_;
  std::optional<Mask> gt_;
  EpisodeConfig cfg_;
  std::shared_ptr<LabelingCache> cache_;
  std::shared_ptr<const SupervoxelLabeling> labeling_;
  int labeling_iteration_ = -1;
  BoundaryWeightField weights_;
  ProbMap p_;
  HintSet hints_;
  InteractionMapPair maps_;
  std::vector<Click> pending_clicks_;
  int iteration_ = 0;
  EpisodeTrace trace_;
};

std::uint64_t hash_state(const EnvState& s);

}  // namespace iris
