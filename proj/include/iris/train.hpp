#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iris/env.hpp"
#include "iris/metrics.hpp"
#include "iris/nn.hpp"
#include "iris/volume.hpp"

namespace iris {

/// One normalised training or test case.
struct Sample {
  Volume volume;
  Mask gt;
  std::shared_ptr<LabelingCache> labelings = std::make_shared<LabelingCache>();
};

struct DatasetSpec {
  int train_count = 200;
  int test_count = 50;
  SynthSpec synth{};  // seed here is the dataset base seed
};

/// Case i of the train split uses seed derive(base, {0, i}); the test split uses {1, i}.
std::vector<Sample> make_split(const DatasetSpec& spec, bool test);
Sample make_sample(const Volume& raw, const Mask& gt);

enum class LrSchedule { Constant, LinearDecay };

struct TrainConfig {
  int workers = 4;
  int t_max = 4;
  double learning_rate = 1e-4;
  LrSchedule lr_schedule = LrSchedule::LinearDecay;
  int warmup_epochs = 3;
  int interactive_epochs = 7;
  /// Stop once this many environment steps have been taken (0 means run all epochs).
  std::uint64_t max_env_steps = 0;
  std::uint64_t seed = 0;
  nn::ArchSpec arch{};
  EpisodeConfig episode{};
  double value_coef = 1.0;
  double entropy_coef = 0.0;
  bool augment = false;
  /// Worker i sleeps this long per segment; tests use it to force interleaving.
  int debug_worker_delay_us = 0;
};

/// Rejects inconsistent combinations (t_max > T, non-positive lr, ...).
void validate(const TrainConfig& cfg);

/// Adam first/second moments for every parameter.
struct OptimizerState {
  std::vector<float> m;
  std::vector<float> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_update(std::vector<float>& params, std::span<const float> grad, OptimizerState& st, double lr);

/// Global parameters shared by all workers. Gradient application is serialised.
class SharedParameterStore {
 public:
  explicit SharedParameterStore(nn::NetworkParams<float> init);

  nn::NetworkParams<float> snapshot() const;
  /// Applies one accumulated gradient batch; returns the update index (1-based).
  std::uint64_t apply(std::span<const float> grad, double lr);
  std::uint64_t updates() const;

 private:
  mutable std::mutex mu_;
  nn::NetworkParams<float> params_;
  OptimizerState opt_;
};

/// Append-only, ordered log of JSON lines.
class MetricsLog {
 public:
  explicit MetricsLog(std::ostream* sink = nullptr) : sink_(sink) {}
  void push(nlohmann::json line);
  std::vector<nlohmann::json> lines() const;

 private:
  mutable std::mutex mu_;
  std::ostream* sink_;
  std::vector<nlohmann::json> lines_;
};

struct TrainResult {
  nn::NetworkParams<float> params;
  std::uint64_t env_steps = 0;
  std::uint64_t updates = 0;
  std::uint64_t submitted = 0;
};

nn::Tensor<float> state_tensor(const EnvState& s);

/// Draws one action per voxel from the per-voxel categorical distribution.
std::vector<std::uint8_t> sample_actions(const nn::Tensor<float>& policy, std::uint64_t seed);

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& data, MetricsLog* log = nullptr,
                  std::optional<nn::NetworkParams<float>> init = std::nullopt);

// Evaluation ---------------------------------------------------------------------

/// Maps the current environment state to one action per voxel.
using PolicyFn = std::function<ActionField(Env&, const EnvState&)>;

PolicyFn greedy_policy(const nn::NetworkParams<float>& params);

struct EvalProtocol {
  EpisodeConfig episode{};
  std::vector<double> dsc_thresholds{0.85, 0.90};
  std::uint64_t seed = 0;
  int threads = 1;
};

struct CaseResult {
  std::vector<MetricReport> per_iteration;
  std::vector<int> cumulative_clicks;
  /// Smallest cumulative click count whose DSC exceeds each threshold (absent if never).
  std::vector<std::optional<int>> clicks_to_threshold;
};

struct MeanStd {
  double mean = 0.0;
  double stdev = 0.0;
  int count = 0;     // cases where the metric was defined
  int undefined = 0; // cases with an empty mask
};

struct IterationSummary {
  MeanStd dsc, assd, hd95;
};

struct EvalReport {
  std::vector<CaseResult> cases;
  std::vector<IterationSummary> per_iteration;
  std::vector<double> thresholds;
  std::vector<MeanStd> clicks_to_threshold;
  std::vector<int> reached_threshold;

  const IterationSummary& final() const { return per_iteration.back(); }
  /// Fraction of cases whose DSC never decreases from iteration 1 to T.
  double monotone_fraction() const;
};

EvalReport evaluate(const PolicyFn& policy, const std::vector<Sample>& data, const EvalProtocol& protocol);
EvalReport evaluate(const nn::NetworkParams<float>& params, const std::vector<Sample>& data,
                    const EvalProtocol& protocol);

nlohmann::json report_to_json(const EvalReport& r);
std::string format_report(const EvalReport& r);

// Ablations -----------------------------------------------------------------------

struct AblationVariant {
  std::string axis;  // e.g. "reward", "interaction", "noise"
  std::string name;
  std::shared_ptr<const nn::NetworkParams<float>> params;
  EvalProtocol protocol;
};

struct AblationRow {
  std::string axis;
  std::string name;
  IterationSummary final;
};

std::vector<AblationRow> ablation_suite(const std::vector<AblationVariant>& variants, const std::vector<Sample>& test);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// Evaluation-time variants of one trained model: interaction type, noise range, map generator,
/// click-budget split and supervoxel size policy.
std::vector<AblationVariant> protocol_variants(std::shared_ptr<const nn::NetworkParams<float>> params,
                                               const EvalProtocol& base);

}  // namespace iris
