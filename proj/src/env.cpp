#include "iris/env.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "iris/metrics.hpp"
#include "iris/rng.hpp"

namespace iris {

ActionSpec ActionSpec::symmetric(const std::vector<double>& magnitudes) {
  if (magnitudes.empty()) throw std::invalid_argument("action set must not be empty");
  std::vector<double> m = magnitudes;
  for (double x : m)
    if (!(x > 0.0)) throw std::invalid_argument("action magnitudes must be > 0");
  std::sort(m.begin(), m.end());
  ActionSpec s;
  for (auto it = m.rbegin(); it != m.rend(); ++it) s.deltas.push_back(-*it);
  for (double x : m) s.deltas.push_back(x);
  return s;
}

ActionSpec default_action_spec() { return ActionSpec::symmetric({0.1, 0.2, 0.4}); }

int SupervoxelPolicy::region_count(int iteration) const {
  return kind == Kind::Fixed ? fixed_count : schedule_region_count(iteration);
}

std::shared_ptr<const SupervoxelLabeling> LabelingCache::get(const Volume& v, int region_count,
                                                             const SlicConfig& cfg) {
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(region_count);
    if (it != cache_.end()) return it->second;
  }
  auto l = std::make_shared<const SupervoxelLabeling>(slic(v, region_count, cfg));
  std::lock_guard lock(mu_);
  return cache_.emplace(region_count, std::move(l)).first->second;
}

ProbMap apply_actions(std::span<const double> p, std::span<const std::uint8_t> actions, const ActionSpec& spec) {
  if (p.size() != actions.size()) throw std::invalid_argument("action field size mismatch");
  ProbMap out(p.size());
  const int K = spec.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (actions[i] >= K) throw std::out_of_range("action index " + std::to_string(actions[i]) + " >= K");
    out[i] = std::clamp(p[i] + spec.deltas[actions[i]], 0.0, 1.0);
  }
  return out;
}

std::uint64_t hash_state(const EnvState& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&](std::span<const double> xs) {
    for (double x : xs) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 0x100000001b3ull;
      }
    }
  };
  eat(s.intensity);
  eat(s.probability);
  eat(s.h_plus);
  eat(s.h_minus);
  return h;
}

Env::Env(Volume normalized, std::optional<Mask> gt, EpisodeConfig cfg, std::shared_ptr<LabelingCache> cache)
    : volume_(std::move(normalized)), gt_(std::move(gt)), cfg_(std::move(cfg)), cache_(std::move(cache)) {
  if (cfg_.T < 1) throw std::invalid_argument("episode length T must be >= 1");
  if (cfg_.actions.size() < 1) throw std::invalid_argument("action set must not be empty");
  const Dims& d = volume_.dims();
  if (gt_ && !(gt_->dims() == d))
    throw std::invalid_argument("ground truth dims " + to_string(gt_->dims()) + " do not match volume " + to_string(d));
  p_.assign(d.count(), 0.5);
  maps_.h_plus = {d, std::vector<double>(d.count(), 0.0)};
  maps_.h_minus = {d, std::vector<double>(d.count(), 0.0)};
  if (gt_) weights_ = boundary_weights(*gt_, volume_.spacing());
  if (!cache_) cache_ = std::make_shared<LabelingCache>();
  labeling();
}

const SupervoxelLabeling& Env::labeling() {
  if (labeling_iteration_ != iteration_ || !labeling_) {
    const int requested = cfg_.supervoxels.region_count(iteration_);
    const int count = std::clamp(requested, 1, static_cast<int>(volume_.size()));
    labeling_ = cache_->get(volume_, count, cfg_.slic);
    labeling_iteration_ = iteration_;
  }
  return *labeling_;
}

EnvState Env::state() const {
  return EnvState{volume_.dims(), volume_.voxels(), p_, maps_.h_plus.values, maps_.h_minus.values};
}

ExpandResult Env::add_clicks(const std::vector<Click>& clicks) {
  for (const Click& c : clicks)
    if (!in_grid(volume_.dims(), c.position)) throw std::out_of_range("click outside grid");
  pending_clicks_.insert(pending_clicks_.end(), clicks.begin(), clicks.end());
  if (cfg_.no_interaction || clicks.empty()) return ExpandResult{hints_, 0, 0};
  ExpandResult r = expand_clicks(clicks, labeling(), hints_, cfg_.click_mode);
  hints_ = r.hints;
  return r;
}

EnvState Env::refresh_maps() {
  if (!cfg_.no_interaction && !hints_.empty()) maps_ = build_maps(volume_, hints_, cfg_.distance);
  return state();
}

EnvState Env::interact(const std::vector<Click>& clicks) {
  if (done()) throw std::logic_error("episode already finished");
  pending_clicks_.clear();
  const ExpandResult r = add_clicks(clicks);
  if (r.object_added + r.background_added > 0) refresh_maps();
  return state();
}

EnvState Env::interact_robot() {
  if (!gt_) throw std::logic_error("robot interaction requires ground truth");
  if (done()) throw std::logic_error("episode already finished");
  if (cfg_.no_interaction) return interact({});
  RobotConfig rc = cfg_.robot;
  rc.seed = derive_seed(cfg_.robot.seed, {static_cast<std::uint64_t>(iteration_)});
  const auto clicks = simulate_clicks(prediction(), *gt_, labeling(), rc);
  return interact(clicks);
}

StepResult Env::step(std::span<const std::uint8_t> actions) {
  if (done()) throw std::logic_error("episode already finished");
  TraceRecord rec;
  if (cfg_.record_trace) {
    rec.iteration = iteration_ + 1;
    rec.region_request = cfg_.supervoxels.region_count(iteration_);
    rec.region_count = labeling().region_count;
    rec.clicks = pending_clicks_;
    rec.object_hints = hints_.object_hints.size();
    rec.background_hints = hints_.background_hints.size();
    rec.state_hash = hash_state(state());
    rec.actions.assign(actions.begin(), actions.end());
    rec.h_plus = maps_.h_plus.values;
    rec.h_minus = maps_.h_minus.values;
    rec.supervoxels = labeling().labels;
  }
  ProbMap next = apply_actions(p_, actions, cfg_.actions);
  StepResult out;
  if (gt_) out.reward = compute_reward(p_, next, *gt_, weights_, cfg_.reward);
  p_ = std::move(next);
  ++iteration_;
  pending_clicks_.clear();
  out.state = state();
  out.done = done();
  if (cfg_.record_trace) {
    rec.probability = p_;
    rec.reward = out.reward;
    if (gt_) rec.dsc = dsc(prediction(), *gt_);
    trace_.records.push_back(std::move(rec));
  }
  return out;
}

nlohmann::json trace_record_to_json(const TraceRecord& r, bool full) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["region_request"] = r.region_request;
  j["region_count"] = r.region_count;
  j["clicks"] = nlohmann::json::array();
  for (const auto& c : r.clicks) j["clicks"].push_back(click_to_json(c));
  j["object_hints"] = r.object_hints;
  j["background_hints"] = r.background_hints;
  j["state_hash"] = r.state_hash;
  j["dsc"] = r.dsc ? nlohmann::json(*r.dsc) : nlohmann::json(nullptr);
  if (r.reward) {
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    j["reward_mean"] = {{"global", mean(r.reward->r_global)},
                        {"boundary", mean(r.reward->r_boundary)},
                        {"total", mean(r.reward->r_total)}};
  } else {
    j["reward_mean"] = nullptr;
  }
  std::map<int, std::size_t> hist;
  for (auto a : r.actions) ++hist[a];
  nlohmann::json h = nlohmann::json::object();
  for (auto [k, v] : hist) h[std::to_string(k)] = v;
  j["action_histogram"] = h;
  if (full) {
    j["actions"] = r.actions;
    j["probability"] = r.probability;
    j["h_plus"] = r.h_plus;
    j["h_minus"] = r.h_minus;
    j["supervoxels"] = r.supervoxels;
    if (r.reward) {
      j["reward"] = {{"global", r.reward->r_global},
                     {"boundary", r.reward->r_boundary},
                     {"total", r.reward->r_total}};
    }
  }
  return j;
}

}  // namespace iris
