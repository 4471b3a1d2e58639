#include "iris/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "iris/rng.hpp"

namespace iris {

Sample make_sample(const Volume& raw, const Mask& gt) {
  return Sample{normalize(raw), gt, std::make_shared<LabelingCache>()};
}

std::vector<Sample> make_split(const DatasetSpec& spec, bool test) {
  const int count = test ? spec.test_count : spec.train_count;
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    SynthSpec s = spec.synth;
    s.seed = derive_seed(spec.synth.seed, {test ? 1u : 0u, static_cast<std::uint64_t>(i)});
    auto [v, m] = generate_synthetic(s);
    out.push_back(make_sample(v, m));
  }
  return out;
}

void validate(const TrainConfig& cfg) {
  if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (cfg.episode.T < 1) throw std::invalid_argument("T must be >= 1");
  if (cfg.t_max < 1 || cfg.t_max > cfg.episode.T)
    throw std::invalid_argument("t_max must be in [1, T] (got t_max=" + std::to_string(cfg.t_max) +
                                ", T=" + std::to_string(cfg.episode.T) + ")");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(cfg.episode.reward.gamma > 0.0 && cfg.episode.reward.gamma <= 1.0))
    throw std::invalid_argument("gamma must be in (0, 1]");
  if (cfg.episode.reward.lambda_boundary < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (cfg.warmup_epochs < 0 || cfg.interactive_epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (cfg.arch.actions != cfg.episode.actions.size())
    throw std::invalid_argument("network action count does not match the action set");
}

void adam_update(std::vector<float>& params, std::span<const float> grad, OptimizerState& st, double lr) {
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0f);
    st.v.assign(params.size(), 0.0f);
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const float b1 = static_cast<float>(st.beta1), b2 = static_cast<float>(st.beta2);
  const float step = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(st.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i];
    st.m[i] = b1 * st.m[i] + (1.0f - b1) * g;
    st.v[i] = b2 * st.v[i] + (1.0f - b2) * g * g;
    params[i] -= step * st.m[i] / (std::sqrt(st.v[i] * inv_c2) + eps);
  }
}

SharedParameterStore::SharedParameterStore(nn::NetworkParams<float> init) : params_(std::move(init)) {}

nn::NetworkParams<float> SharedParameterStore::snapshot() const {
  std::lock_guard lock(mu_);
  return params_;
}

std::uint64_t SharedParameterStore::apply(std::span<const float> grad, double lr) {
  std::lock_guard lock(mu_);
  if (grad.size() != params_.values.size()) throw std::invalid_argument("gradient size mismatch");
  adam_update(params_.values, grad, opt_, lr);
  return opt_.step;
}

std::uint64_t SharedParameterStore::updates() const {
  std::lock_guard lock(mu_);
  return opt_.step;
}

void MetricsLog::push(nlohmann::json line) {
  std::lock_guard lock(mu_);
  if (sink_) *sink_ << line.dump() << '\n' << std::flush;
  lines_.push_back(std::move(line));
}

std::vector<nlohmann::json> MetricsLog::lines() const {
  std::lock_guard lock(mu_);
  return lines_;
}

nn::Tensor<float> state_tensor(const EnvState& s) {
  nn::Tensor<float> t(4, s.dims);
  const std::size_t n = s.dims.count();
  const std::span<const double> chans[4] = {s.intensity, s.probability, s.h_plus, s.h_minus};
  for (int c = 0; c < 4; ++c) {
    float* dst = t.channel(c);
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(chans[c][i]);
  }
  return t;
}

std::vector<std::uint8_t> sample_actions(const nn::Tensor<float>& policy, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = policy.voxels();
  const int K = policy.channels;
  std::vector<std::uint8_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unit(rng);
    double acc = 0.0;
    int k = 0;
    for (; k < K - 1; ++k) {
      acc += policy.data[k * n + i];
      if (u < acc) break;
    }
    out[i] = static_cast<std::uint8_t>(k);
  }
  return out;
}

namespace {

struct Rollout {
  nn::ForwardCache<float> cache;
  ActionField actions;
  std::vector<double> reward;
};

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& data, MetricsLog* log,
                  std::optional<nn::NetworkParams<float>> init) {
  validate(cfg);
  if (data.empty()) throw std::invalid_argument("training set is empty");

  nn::NetworkParams<float> start = init ? std::move(*init) : nn::init_params<float>(cfg.arch, cfg.seed);
  if (!(start.layout.arch == cfg.arch)) throw std::invalid_argument("initial parameters do not match architecture");
  SharedParameterStore store(std::move(start));

  const std::uint64_t n = data.size();
  const int epochs = cfg.warmup_epochs + cfg.interactive_epochs;
  const std::uint64_t total_episodes = static_cast<std::uint64_t>(epochs) * n;
  const int T = cfg.episode.T;
  const std::uint64_t segments_per_episode = static_cast<std::uint64_t>((T + cfg.t_max - 1) / cfg.t_max);
  const double total_updates = static_cast<double>(std::max<std::uint64_t>(1, total_episodes * segments_per_episode));

  std::vector<std::vector<std::uint32_t>> order(epochs);
  for (int e = 0; e < epochs; ++e) {
    order[e].resize(n);
    std::iota(order[e].begin(), order[e].end(), 0u);
    std::mt19937_64 rng(derive_seed(cfg.seed, {0xE90C, static_cast<std::uint64_t>(e)}));
    std::shuffle(order[e].begin(), order[e].end(), rng);
  }

  std::atomic<std::uint64_t> next_episode{0};
  std::atomic<std::uint64_t> env_steps{0};
  std::atomic<std::uint64_t> submitted{0};
  std::mutex error_mu;
  std::exception_ptr error;

  auto worker = [&](int wid) {
    try {
      std::unique_ptr<Env> env;
      std::uint64_t episode = 0;
      bool warmup = false;
      std::vector<float> grad;
      for (;;) {
        if (!env || env->done()) {
          episode = next_episode.fetch_add(1);
          if (episode >= total_episodes) break;
          if (cfg.max_env_steps > 0 && env_steps.load() >= cfg.max_env_steps) break;
          const auto epoch = static_cast<int>(episode / n);
          const Sample& s = data[order[epoch][episode % n]];
          warmup = epoch < cfg.warmup_epochs;
          EpisodeConfig ec = cfg.episode;
          ec.no_interaction = ec.no_interaction || warmup;
          ec.record_trace = false;
          ec.robot.seed = derive_seed(cfg.seed, {0x0B07, episode});
          if (cfg.augment) {
            auto [v, m] = augment(s.volume, s.gt, derive_seed(cfg.seed, {0xA06, episode}));
            env = std::make_unique<Env>(std::move(v), std::move(m), ec);
          } else {
            env = std::make_unique<Env>(s.volume, s.gt, ec, s.labelings);
          }
        }

        const nn::NetworkParams<float> local = store.snapshot();
        std::vector<Rollout> seg;
        for (int t = 0; t < cfg.t_max && !env->done(); ++t) {
          const EnvState st = env->interact_robot();
          Rollout r;
          nn::forward(local, state_tensor(st), &r.cache);
          r.actions = sample_actions(
              r.cache.out.policy, derive_seed(cfg.seed, {0x5A3, episode, static_cast<std::uint64_t>(env->iteration())}));
          const StepResult res = env->step(r.actions);
          r.reward = res.reward->r_total;
          seg.push_back(std::move(r));
          env_steps.fetch_add(1);
        }
        if (cfg.debug_worker_delay_us > 0)
          std::this_thread::sleep_for(std::chrono::microseconds(cfg.debug_worker_delay_us));

        grad.assign(local.count(), 0.0f);
        const std::size_t voxels = seg.front().reward.size();
        std::vector<std::vector<double>> totals;
        for (const Rollout& r : seg) totals.push_back(r.reward);
        const auto returns = discounted_returns(totals, cfg.episode.reward.gamma);
        std::vector<float> adv(voxels), ret(voxels);
        nn::BackwardTerms terms;
        terms.value_coef = cfg.value_coef;
        terms.entropy_coef = cfg.entropy_coef;
        double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0, reward_sum = 0.0;
        for (std::size_t k = seg.size(); k-- > 0;) {
          const Rollout& r = seg[k];
          for (std::size_t i = 0; i < voxels; ++i) {
            ret[i] = static_cast<float>(returns[k][i]);
            adv[i] = static_cast<float>(returns[k][i] - r.cache.out.value.data[i]);
          }
          const auto lv = nn::backward<float>(local, r.cache, r.actions, adv, ret, grad, terms);
          policy_loss += lv.policy_loss;
          value_loss += lv.value_loss;
          entropy += lv.entropy;
          reward_sum += mean_of(r.reward);
        }
        const double progress = static_cast<double>(store.updates()) / total_updates;
        const double lr = cfg.lr_schedule == LrSchedule::LinearDecay
                              ? cfg.learning_rate * std::max(0.0, 1.0 - progress)
                              : cfg.learning_rate;
        const std::uint64_t update = store.apply(grad, lr);
        submitted.fetch_add(1);

        if (log) {
          nlohmann::json line{{"step", env_steps.load()},
                              {"update", update},
                              {"worker", wid},
                              {"episode", episode},
                              {"phase", warmup ? "warmup" : "interactive"},
                              {"mean_reward", reward_sum},
                              {"value_loss", value_loss / seg.size()},
                              {"policy_loss", policy_loss / seg.size()},
                              {"entropy", entropy / seg.size()},
                              {"lr", lr}};
          if (env->done()) line["train_dsc"] = dsc(env->prediction(), *env->ground_truth());
          log->push(std::move(line));
        }
      }
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!error) error = std::current_exception();
      next_episode.store(total_episodes);
    }
  };

  if (cfg.workers == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < cfg.workers; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  TrainResult out{store.snapshot(), env_steps.load(), store.updates(), submitted.load()};
  return out;
}

// Evaluation -----------------------------------------------------------------------

PolicyFn greedy_policy(const nn::NetworkParams<float>& params) {
  auto shared = std::make_shared<const nn::NetworkParams<float>>(params);
  return [shared](Env&, const EnvState& s) { return nn::argmax_actions(nn::forward(*shared, state_tensor(s)).policy); };
}

double EvalReport::monotone_fraction() const {
  if (cases.empty()) return 0.0;
  int ok = 0;
  for (const auto& c : cases) {
    bool mono = true;
    for (std::size_t t = 1; t < c.per_iteration.size(); ++t)
      if (c.per_iteration[t].dsc < c.per_iteration[t - 1].dsc) mono = false;
    ok += mono;
  }
  return static_cast<double>(ok) / static_cast<double>(cases.size());
}

namespace {

MeanStd summarize(const std::vector<std::optional<double>>& xs) {
  MeanStd m;
  double sum = 0.0, sum2 = 0.0;
  for (const auto& x : xs) {
    if (!x) {
      ++m.undefined;
      continue;
    }
    ++m.count;
    sum += *x;
  }
  if (m.count == 0) return m;
  m.mean = sum / m.count;
  for (const auto& x : xs)
    if (x) sum2 += (*x - m.mean) * (*x - m.mean);
  m.stdev = std::sqrt(sum2 / m.count);
  return m;
}

CaseResult run_case(const PolicyFn& policy, const Sample& s, const EvalProtocol& protocol, std::size_t index) {
  EpisodeConfig ec = protocol.episode;
  ec.robot.seed = derive_seed(protocol.seed, {0xE7A1, index});
  const bool default_slic = ec.slic == SlicConfig{};
  Env env(s.volume, s.gt, ec, default_slic ? s.labelings : nullptr);
  CaseResult out;
  int clicks = 0;
  out.clicks_to_threshold.assign(protocol.dsc_thresholds.size(), std::nullopt);
  while (!env.done()) {
    const EnvState st = env.interact_robot();
    clicks += static_cast<int>(env.pending_clicks().size());
    const ActionField a = policy(env, st);
    env.step(a);
    out.per_iteration.push_back(evaluate_masks(env.prediction(), s.gt, s.volume.spacing()));
    out.cumulative_clicks.push_back(clicks);
    for (std::size_t k = 0; k < protocol.dsc_thresholds.size(); ++k)
      if (!out.clicks_to_threshold[k] && out.per_iteration.back().dsc > protocol.dsc_thresholds[k])
        out.clicks_to_threshold[k] = clicks;
  }
  return out;
}

}  // namespace

EvalReport evaluate(const PolicyFn& policy, const std::vector<Sample>& data, const EvalProtocol& protocol) {
  EvalReport rep;
  rep.thresholds = protocol.dsc_thresholds;
  rep.cases.resize(data.size());
  const int threads = std::max(1, std::min<int>(protocol.threads, static_cast<int>(data.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < data.size(); ++i) rep.cases[i] = run_case(policy, data[i], protocol, i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex mu;
    std::exception_ptr err;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        try {
          for (std::size_t i; (i = next.fetch_add(1)) < data.size();)
            rep.cases[i] = run_case(policy, data[i], protocol, i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
          next.store(data.size());
        }
      });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
  }

  const int T = protocol.episode.T;
  for (int t = 0; t < T; ++t) {
    std::vector<std::optional<double>> d, a, h;
    for (const auto& c : rep.cases) {
      d.push_back(c.per_iteration[t].dsc);
      a.push_back(c.per_iteration[t].assd);
      h.push_back(c.per_iteration[t].hd95);
    }
    rep.per_iteration.push_back({summarize(d), summarize(a), summarize(h)});
  }
  for (std::size_t k = 0; k < rep.thresholds.size(); ++k) {
    std::vector<std::optional<double>> c;
    int reached = 0;
    for (const auto& cr : rep.cases) {
      if (cr.clicks_to_threshold[k]) {
        c.push_back(static_cast<double>(*cr.clicks_to_threshold[k]));
        ++reached;
      } else {
        c.push_back(std::nullopt);
      }
    }
    rep.clicks_to_threshold.push_back(summarize(c));
    rep.reached_threshold.push_back(reached);
  }
  return rep;
}

EvalReport evaluate(const nn::NetworkParams<float>& params, const std::vector<Sample>& data,
                    const EvalProtocol& protocol) {
  return evaluate(greedy_policy(params), data, protocol);
}

namespace {

nlohmann::json mean_std_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.stdev}, {"count", m.count}, {"undefined", m.undefined}};
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["per_iteration"] = nlohmann::json::array();
  for (std::size_t t = 0; t < r.per_iteration.size(); ++t) {
    const auto& it = r.per_iteration[t];
    j["per_iteration"].push_back({{"iteration", t + 1},
                                  {"dsc", mean_std_json(it.dsc)},
                                  {"assd", mean_std_json(it.assd)},
                                  {"hd95", mean_std_json(it.hd95)}});
  }
  j["clicks_to_threshold"] = nlohmann::json::array();
  for (std::size_t k = 0; k < r.thresholds.size(); ++k)
    j["clicks_to_threshold"].push_back({{"threshold", r.thresholds[k]},
                                        {"clicks", mean_std_json(r.clicks_to_threshold[k])},
                                        {"reached", r.reached_threshold[k]}});
  j["monotone_fraction"] = r.monotone_fraction();
  j["cases"] = nlohmann::json::array();
  for (const auto& c : r.cases) {
    nlohmann::json cj = nlohmann::json::array();
    for (std::size_t t = 0; t < c.per_iteration.size(); ++t) {
      const auto& m = c.per_iteration[t];
      cj.push_back({{"dsc", m.dsc},
                    {"assd", m.assd ? nlohmann::json(*m.assd) : nlohmann::json(nullptr)},
                    {"hd95", m.hd95 ? nlohmann::json(*m.hd95) : nlohmann::json(nullptr)},
                    {"clicks", c.cumulative_clicks[t]}});
    }
    j["cases"].push_back(cj);
  }
  return j;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "iter  DSC               ASSD(pixels)      HD95(mm)\n";
  for (std::size_t t = 0; t < r.per_iteration.size(); ++t) {
    const auto& it = r.per_iteration[t];
    os << std::setw(4) << t + 1 << "  " << it.dsc.mean << " ± " << it.dsc.stdev << "  " << it.assd.mean << " ± "
       << it.assd.stdev << "  " << it.hd95.mean << " ± " << it.hd95.stdev;
    if (it.assd.undefined > 0) os << "  (" << it.assd.undefined << " undefined)";
    os << "\n";
  }
  for (std::size_t k = 0; k < r.thresholds.size(); ++k)
    os << "clicks to DSC > " << r.thresholds[k] << ": " << r.clicks_to_threshold[k].mean << " ± "
       << r.clicks_to_threshold[k].stdev << " (" << r.reached_threshold[k] << "/" << r.cases.size()
       << " reached)\n";
  os << "monotone DSC cases: " << r.monotone_fraction() << "\n";
  return os.str();
}

std::vector<AblationRow> ablation_suite(const std::vector<AblationVariant>& variants, const std::vector<Sample>& test) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    if (!v.params) throw std::invalid_argument("ablation variant " + v.name + " has no parameters");
    const EvalReport r = evaluate(*v.params, test, v.protocol);
    rows.push_back({v.axis, v.name, r.final()});
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  std::string axis;
  for (const auto& r : rows) {
    if (r.axis != axis) {
      axis = r.axis;
      os << "[" << axis << "]\n";
    }
    os << "  " << std::left << std::setw(28) << r.name << std::right << " DSC " << r.final.dsc.mean << " ± "
       << r.final.dsc.stdev << "  ASSD " << r.final.assd.mean << "  HD95 " << r.final.hd95.mean << "\n";
  }
  return os.str();
}

std::vector<AblationVariant> protocol_variants(std::shared_ptr<const nn::NetworkParams<float>> params,
                                               const EvalProtocol& base) {
  std::vector<AblationVariant> out;
  auto add = [&](std::string axis, std::string name, auto mutate) {
    EvalProtocol p = base;
    mutate(p);
    out.push_back({std::move(axis), std::move(name), params, p});
  };
  add("interaction", "no interaction", [](EvalProtocol& p) { p.episode.no_interaction = true; });
  add("interaction", "point", [](EvalProtocol& p) { p.episode.click_mode = ClickMode::Point; });
  add("interaction", "supervoxel", [](EvalProtocol& p) { p.episode.click_mode = ClickMode::Supervoxel; });
  for (int noise : {0, 3, 5, 7})
    for (ClickMode mode : {ClickMode::Point, ClickMode::Supervoxel})
      add("noise", std::string(mode == ClickMode::Point ? "point" : "supervoxel") + " noise " + std::to_string(noise),
          [=](EvalProtocol& p) {
            p.episode.click_mode = mode;
            p.episode.robot.noise_range = noise;
          });
  add("map", "euclidean", [](EvalProtocol& p) { p.episode.distance = Euclidean{}; });
  add("map", "gaussian", [](EvalProtocol& p) { p.episode.distance = Gaussian{}; });
  add("map", "geodesic", [](EvalProtocol& p) { p.episode.distance = Geodesic{}; });
  for (auto [clicks, iters] : std::vector<std::pair<int, int>>{{1, 24}, {2, 12}, {3, 8}, {4, 6}, {6, 4}, {8, 3},
                                                                {12, 2}, {24, 1}})
    add("clicks", std::to_string(clicks) + " clicks x " + std::to_string(iters) + " iters", [=](EvalProtocol& p) {
      p.episode.robot.clicks_per_iteration = clicks;
      p.episode.T = iters;
    });
  add("supervoxel size", "fixed 100", [](EvalProtocol& p) {
    p.episode.supervoxels = {SupervoxelPolicy::Kind::Fixed, 100};
  });
  add("supervoxel size", "declining", [](EvalProtocol& p) { p.episode.supervoxels = {}; });
  add("supervoxel size", "fixed 10", [](EvalProtocol& p) {
    p.episode.supervoxels = {SupervoxelPolicy::Kind::Fixed, 10};
  });
  add("supervoxel size", "point", [](EvalProtocol& p) { p.episode.click_mode = ClickMode::Point; });
  return out;
}

}  // namespace iris
