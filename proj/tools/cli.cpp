#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "iris/rng.hpp"
#include "iris/service.hpp"
#include "iris/train.hpp"

namespace iris::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string default_data_dir() {
  const char* env = std::getenv("IRIS_DATA_DIR");
  return env && *env ? env : "data";
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

/// One manifest per run: command, effective configuration, seeds, artifacts and timestamps.
struct Manifest {
  json doc;
  fs::path path;

  Manifest(std::string command, fs::path where) : path(std::move(where)) {
    doc["command"] = std::move(command);
    doc["started"] = utc_now();
    doc["artifacts"] = json::array();
  }
  void artifact(const fs::path& p) { doc["artifacts"].push_back(p.string()); }
  void finish() {
    doc["finished"] = utc_now();
    write_text(path, doc.dump(2) + "\n");
  }
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated number list, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list '" + text + "'");
  return out;
}

Dims parse_dims(const std::string& text) {
  const auto v = parse_list(text);
  if (v.size() != 3) throw ConfigError("dims must be D,H,W");
  Dims d{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
  if (!d.valid()) throw ConfigError("dims must be positive");
  return d;
}

struct EpisodeOpts {
  int T = 4;
  int clicks = 6;
  double gamma = 0.95;
  double lambda = 0.5;
  std::string action_set = "0.1,0.2,0.4";
  std::string distance = "geodesic";
  double geodesic_reg = 1e-2;
  double gaussian_sigma = 5.0;
  int noise = 0;
  std::string clicking = "supervoxel";
  std::string supervoxels = "declining";
  std::string reward_form = "relative";
  bool no_interaction = false;

  void add(CLI::App* app) {
    app->add_option("--T", T, "Refinement iterations per episode")->check(CLI::PositiveNumber);
    app->add_option("--clicks", clicks, "Robot clicks per iteration (N_c)")->check(CLI::NonNegativeNumber);
    app->add_option("--gamma", gamma, "Discount factor");
    app->add_option("--lambda", lambda, "Boundary reward weight");
    app->add_option("--action-set", action_set, "Positive action magnitudes, e.g. 0.1,0.2,0.4");
    app->add_option("--distance", distance, "Interaction map: geodesic|euclidean|gaussian")
        ->check(CLI::IsMember({"geodesic", "euclidean", "gaussian"}));
    app->add_option("--geodesic-reg", geodesic_reg, "Spatial regulariser of the geodesic step cost");
    app->add_option("--gaussian-sigma", gaussian_sigma, "Gaussian map bandwidth");
    app->add_option("--noise", noise, "Click perturbation half-width per axis")->check(CLI::NonNegativeNumber);
    app->add_option("--clicking", clicking, "Click expansion: supervoxel|point")
        ->check(CLI::IsMember({"supervoxel", "point"}));
    app->add_option("--supervoxels", supervoxels, "Supervoxel count policy: declining or a fixed count");
    app->add_option("--reward-form", reward_form, "relative|absolute")->check(CLI::IsMember({"relative", "absolute"}));
    app->add_flag("--no-interaction", no_interaction, "Force both interaction maps to zero");
  }

  EpisodeConfig build() const {
    EpisodeConfig ec;
    ec.T = T;
    ec.robot.clicks_per_iteration = clicks;
    ec.robot.noise_range = noise;
    ec.reward.gamma = gamma;
    ec.reward.lambda_boundary = lambda;
    ec.reward.form = reward_form == "absolute" ? RewardForm::Absolute : RewardForm::Relative;
    try {
      ec.actions = ActionSpec::symmetric(parse_list(action_set));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (distance == "geodesic")
      ec.distance = Geodesic{geodesic_reg};
    else if (distance == "euclidean")
      ec.distance = Euclidean{};
    else
      ec.distance = Gaussian{gaussian_sigma};
    ec.click_mode = clicking == "point" ? ClickMode::Point : ClickMode::Supervoxel;
    if (supervoxels != "declining") {
      int n = 0;
      try {
        n = std::stoi(supervoxels);
      } catch (const std::exception&) {
        throw ConfigError("--supervoxels must be 'declining' or a positive integer");
      }
      if (n < 1) throw ConfigError("--supervoxels must be positive");
      ec.supervoxels = {SupervoxelPolicy::Kind::Fixed, n};
    }
    ec.no_interaction = no_interaction;
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    return ec;
  }

  json snapshot() const {
    return {{"T", T},
            {"clicks", clicks},
            {"gamma", gamma},
            {"lambda", lambda},
            {"action_set", action_set},
            {"distance", distance},
            {"geodesic_reg", geodesic_reg},
            {"gaussian_sigma", gaussian_sigma},
            {"noise", noise},
            {"clicking", clicking},
            {"supervoxels", supervoxels},
            {"reward_form", reward_form},
            {"no_interaction", no_interaction}};
  }
};

// Dataset directories --------------------------------------------------------------

std::string case_name(int i, const char* kind) {
  std::ostringstream os;
  os << "case_" << std::setw(4) << std::setfill('0') << i << "_" << kind << ".ivol";
  return os.str();
}

std::vector<Sample> load_dataset(const fs::path& dir) {
  const fs::path index_path = dir / "index.json";
  std::ifstream f(index_path);
  if (!f) throw std::runtime_error("missing dataset index " + index_path.string());
  const json index = json::parse(f);
  std::vector<Sample> out;
  for (const auto& c : index.at("cases")) {
    const Volume v = load_volume(dir / c.at("image").get<std::string>());
    const Mask m = load_mask(dir / c.at("label").get<std::string>());
    out.push_back(make_sample(v, m));
  }
  return out;
}

// Commands -------------------------------------------------------------------------

struct GenDataOpts {
  std::string out;
  int count = 200;
  std::string dims = "1,64,64";
  std::string split = "train";
  std::uint64_t seed = 0;
  double noise_stdev = SynthSpec{}.noise_stdev;
  double contrast = SynthSpec{}.contrast;
};

int cmd_gen_data(const GenDataOpts& o, std::ostream& out) {
  if (o.count < 0) throw ConfigError("--count must be >= 0");
  DatasetSpec spec;
  const bool test = o.split == "test";
  (test ? spec.test_count : spec.train_count) = o.count;
  spec.synth.seed = o.seed;
  spec.synth.dims = parse_dims(o.dims);
  spec.synth.noise_stdev = o.noise_stdev;
  spec.synth.contrast = o.contrast;
  const fs::path dir = o.out.empty() ? fs::path(default_data_dir()) / o.split : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create dataset directory " + dir.string());

  Manifest manifest("gen-data", fs::path(dir.string() + ".manifest.json"));
  json index{{"split", o.split},
             {"seed", o.seed},
             {"dims", {spec.synth.dims.depth, spec.synth.dims.height, spec.synth.dims.width}},
             {"noise_stdev", o.noise_stdev},
             {"contrast", o.contrast},
             {"cases", json::array()}};
  for (int i = 0; i < o.count; ++i) {
    SynthSpec s = spec.synth;
    s.seed = derive_seed(spec.synth.seed, {test ? 1u : 0u, static_cast<std::uint64_t>(i)});
    auto [v, m] = generate_synthetic(s);
    save_volume(dir / case_name(i, "image"), v);
    save_mask(dir / case_name(i, "label"), m, v.spacing());
    index["cases"].push_back({{"image", case_name(i, "image")},
                              {"label", case_name(i, "label")},
                              {"seed", s.seed},
                              {"foreground", m.count()}});
  }
  write_text(dir / "index.json", index.dump(2) + "\n");
  manifest.doc["config"] = {{"count", o.count}, {"dims", o.dims}, {"split", o.split},
                            {"noise_stdev", o.noise_stdev}, {"contrast", o.contrast}};
  manifest.doc["seeds"] = {{"base", o.seed}};
  manifest.artifact(dir);
  manifest.finish();
  out << json{{"cases", o.count}, {"dir", dir.string()}}.dump() << "\n";
  return kOk;
}

struct TrainOpts {
  std::string data;
  std::string out = "model.ckpt";
  std::string log;
  std::string init;
  int channels = 16;
  int workers = 4;
  int t_max = 4;
  double lr = 1e-4;
  std::string lr_schedule = "linear";
  int warmup_epochs = 3;
  int epochs = 7;
  std::uint64_t max_steps = 0;
  double value_coef = 1.0;
  double entropy_coef = 0.0;
  bool augment = false;
  std::uint64_t seed = 0;
  EpisodeOpts episode;
};

int cmd_train(TrainOpts o, std::ostream& out) {
  TrainConfig cfg;
  cfg.episode = o.episode.build();
  cfg.workers = o.workers;
  cfg.t_max = o.t_max;
  cfg.learning_rate = o.lr;
  cfg.lr_schedule = o.lr_schedule == "constant" ? LrSchedule::Constant : LrSchedule::LinearDecay;
  cfg.warmup_epochs = o.warmup_epochs;
  cfg.interactive_epochs = o.epochs;
  cfg.max_env_steps = o.max_steps;
  cfg.value_coef = o.value_coef;
  cfg.entropy_coef = o.entropy_coef;
  cfg.augment = o.augment;
  cfg.seed = o.seed;
  cfg.arch.channels = o.channels;
  cfg.arch.actions = cfg.episode.actions.size();
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const fs::path data = o.data.empty() ? fs::path(default_data_dir()) / "train" : fs::path(o.data);
  const auto samples = load_dataset(data);
  if (samples.empty()) throw ConfigError("training set " + data.string() + " is empty");
  cfg.arch.kernel_depth = samples.front().volume.dims().depth == 1 ? 1 : 3;

  std::optional<nn::NetworkParams<float>> init;
  if (!o.init.empty()) {
    init = nn::load_checkpoint(o.init);
    if (!(init->layout.arch == cfg.arch)) throw ConfigError("--init checkpoint architecture differs from flags");
  }

  Manifest manifest("train", fs::path(o.out + ".manifest.json"));
  std::ofstream log_file;
  if (!o.log.empty()) {
    if (fs::path(o.log).has_parent_path()) fs::create_directories(fs::path(o.log).parent_path());
    log_file.open(o.log);
    if (!log_file) throw std::runtime_error("cannot write " + o.log);
  }
  MetricsLog log(o.log.empty() ? nullptr : &log_file);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(cfg, samples, &log, std::move(init));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nn::save_checkpoint(o.out, r.params, {o.seed, r.updates});

  manifest.doc["config"] = {{"data", data.string()},
                            {"channels", o.channels},
                            {"workers", o.workers},
                            {"t_max", o.t_max},
                            {"lr", o.lr},
                            {"lr_schedule", o.lr_schedule},
                            {"warmup_epochs", o.warmup_epochs},
                            {"epochs", o.epochs},
                            {"max_steps", o.max_steps},
                            {"value_coef", o.value_coef},
                            {"entropy_coef", o.entropy_coef},
                            {"augment", o.augment},
                            {"init", o.init},
                            {"episode", o.episode.snapshot()}};
  manifest.doc["seeds"] = {{"base", o.seed}};
  manifest.doc["result"] = {{"env_steps", r.env_steps}, {"updates", r.updates}, {"seconds", seconds},
                            {"parameters", r.params.count()}};
  manifest.artifact(o.out);
  if (!o.log.empty()) manifest.artifact(o.log);
  manifest.finish();
  out << json{{"checkpoint", o.out}, {"env_steps", r.env_steps}, {"updates", r.updates},
              {"parameters", r.params.count()}, {"seconds", seconds}}
             .dump()
      << "\n";
  return kOk;
}

struct EvalOpts {
  std::string checkpoint;
  std::string data;
  std::string out = "eval_report.json";
  std::string thresholds = "0.85,0.9";
  int threads = 1;
  std::uint64_t seed = 0;
  EpisodeOpts episode;
};

EvalProtocol build_protocol(const EvalOpts& o) {
  EvalProtocol p;
  p.episode = o.episode.build();
  p.episode.record_trace = false;
  p.dsc_thresholds = parse_list(o.thresholds);
  p.seed = o.seed;
  p.threads = o.threads;
  return p;
}

nn::NetworkParams<float> load_model(const std::string& path, const EpisodeConfig& ec) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path);
  auto params = nn::load_checkpoint(path);
  if (params.layout.arch.actions != ec.actions.size())
    throw ConfigError("checkpoint has " + std::to_string(params.layout.arch.actions) +
                      " actions but the action set has " + std::to_string(ec.actions.size()));
  return params;
}

int cmd_eval(const EvalOpts& o, std::ostream& out) {
  const EvalProtocol protocol = build_protocol(o);
  const auto params = load_model(o.checkpoint, protocol.episode);
  const fs::path data = o.data.empty() ? fs::path(default_data_dir()) / "test" : fs::path(o.data);
  const auto samples = load_dataset(data);
  if (samples.empty()) throw ConfigError("test set " + data.string() + " is empty");
  Manifest manifest("eval", fs::path(o.out + ".manifest.json"));
  const EvalReport rep = evaluate(params, samples, protocol);
  json j = report_to_json(rep);
  j["checkpoint"] = o.checkpoint;
  j["data"] = data.string();
  write_text(o.out, j.dump(2) + "\n");
  out << format_report(rep);
  manifest.doc["config"] = {{"checkpoint", o.checkpoint}, {"data", data.string()}, {"threads", o.threads},
                            {"thresholds", o.thresholds}, {"episode", o.episode.snapshot()}};
  manifest.doc["seeds"] = {{"base", o.seed}};
  manifest.artifact(o.out);
  manifest.finish();
  return kOk;
}

struct SimulateOpts {
  std::string checkpoint;
  std::string volume;
  std::string gt;
  std::string data;
  int case_index = 0;
  std::string out = "trace.jsonl";
  bool full = false;
  bool sample = false;
  std::uint64_t seed = 0;
  EpisodeOpts episode;
};

int cmd_simulate(const SimulateOpts& o, std::ostream& out) {
  EpisodeConfig ec = o.episode.build();
  ec.record_trace = true;
  ec.robot.seed = derive_seed(o.seed, {0x5101});
  const auto params = load_model(o.checkpoint, ec);
  Sample s;
  std::string source;
  if (!o.volume.empty()) {
    if (o.gt.empty()) throw ConfigError("--volume needs --gt for the robot user");
    if (!fs::exists(o.volume) || !fs::exists(o.gt)) throw std::runtime_error("missing input volume or mask");
    s = make_sample(load_volume(o.volume), load_mask(o.gt));
    source = o.volume;
  } else {
    const fs::path data = o.data.empty() ? fs::path(default_data_dir()) / "test" : fs::path(o.data);
    const auto samples = load_dataset(data);
    if (o.case_index < 0 || o.case_index >= static_cast<int>(samples.size()))
      throw ConfigError("--case out of range for " + data.string());
    s = samples[o.case_index];
    source = (data / case_name(o.case_index, "image")).string();
  }
  Manifest manifest("simulate", fs::path(o.out + ".manifest.json"));
  Env env(s.volume, s.gt, ec);
  while (!env.done()) {
    const EnvState st = env.interact_robot();
    const auto pol = nn::forward(params, state_tensor(st)).policy;
    const ActionField a = o.sample ? sample_actions(pol, derive_seed(o.seed, {0x5A3, std::uint64_t(env.iteration())}))
                                   : nn::argmax_actions(pol);
    env.step(a);
  }
  std::ostringstream lines;
  for (const auto& r : env.trace().records) lines << trace_record_to_json(r, o.full).dump() << "\n";
  write_text(o.out, lines.str());
  manifest.doc["config"] = {{"checkpoint", o.checkpoint}, {"source", source}, {"full", o.full},
                            {"sample", o.sample}, {"episode", o.episode.snapshot()}};
  manifest.doc["seeds"] = {{"base", o.seed}, {"robot", ec.robot.seed}};
  manifest.artifact(o.out);
  manifest.finish();
  out << json{{"trace", o.out}, {"iterations", env.trace().records.size()},
              {"final_dsc", dsc(env.prediction(), s.gt)}}
             .dump()
      << "\n";
  return kOk;
}

struct ServeOpts {
  std::string checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_upload_mb = 64;
  std::string manifest = "serve.manifest.json";
  EpisodeOpts episode;
};

int cmd_serve(const ServeOpts& o, std::ostream& out) {
  ServiceConfig sc;
  sc.episode = o.episode.build();
  sc.params = std::make_shared<nn::NetworkParams<float>>(load_model(o.checkpoint, sc.episode));
  sc.max_upload_bytes = o.max_upload_mb << 20;
  SessionManager mgr(sc);
  mgr.start_sweeper();
  httplib::Server server;
  install_routes(server, mgr);
  Manifest manifest("serve", o.manifest);
  manifest.doc["config"] = {{"checkpoint", o.checkpoint}, {"host", o.host}, {"port", o.port},
                            {"max_upload_mb", o.max_upload_mb}, {"episode", o.episode.snapshot()}};
  manifest.doc["seeds"] = json::object();
  manifest.finish();
  if (!server.bind_to_port(o.host, o.port)) throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
  out << json{{"listening", o.host + ":" + std::to_string(o.port)}}.dump() << "\n" << std::flush;
  server.listen_after_bind();
  return kOk;
}

struct AblateOpts {
  std::string checkpoint;
  std::string global_checkpoint;
  std::vector<std::string> variants;  // axis:name:checkpoint
  std::string data;
  std::string out = "ablation.json";
  int threads = 1;
  std::uint64_t seed = 0;
  EpisodeOpts episode;
};

int cmd_ablate(const AblateOpts& o, std::ostream& out) {
  EvalProtocol base;
  base.episode = o.episode.build();
  base.episode.record_trace = false;
  base.seed = o.seed;
  base.threads = o.threads;
  auto params = std::make_shared<const nn::NetworkParams<float>>(load_model(o.checkpoint, base.episode));
  const fs::path data = o.data.empty() ? fs::path(default_data_dir()) / "test" : fs::path(o.data);
  const auto samples = load_dataset(data);
  Manifest manifest("ablate", fs::path(o.out + ".manifest.json"));
  std::vector<AblationVariant> variants;
  variants.push_back({"reward", "boundary-aware", params, base});
  if (!o.global_checkpoint.empty())
    variants.push_back({"reward", "global-only", std::make_shared<const nn::NetworkParams<float>>(
                                                     load_model(o.global_checkpoint, base.episode)),
                        base});
  for (const auto& spec : o.variants) {
    const auto first = spec.find(':'), second = first == std::string::npos ? first : spec.find(':', first + 1);
    if (second == std::string::npos) throw ConfigError("--variant expects axis:name:checkpoint, got " + spec);
    EvalProtocol p = base;
    const fs::path ckpt = spec.substr(second + 1);
    // A model trained with another action set carries it in its training manifest.
    const fs::path train_manifest = ckpt.string() + ".manifest.json";
    if (fs::exists(train_manifest)) {
      const json m = json::parse(read_text(train_manifest));
      if (m.contains("config") && m["config"].contains("episode") && m["config"]["episode"].contains("action_set"))
        p.episode.actions = ActionSpec::symmetric(parse_list(m["config"]["episode"]["action_set"].get<std::string>()));
    }
    variants.push_back({spec.substr(0, first), spec.substr(first + 1, second - first - 1),
                        std::make_shared<const nn::NetworkParams<float>>(load_model(ckpt.string(), p.episode)), p});
  }
  for (auto& v : protocol_variants(params, base)) variants.push_back(std::move(v));
  const auto rows = ablation_suite(variants, samples);
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"axis", r.axis},
                 {"name", r.name},
                 {"dsc", r.final.dsc.mean},
                 {"dsc_std", r.final.dsc.stdev},
                 {"assd", r.final.assd.mean},
                 {"hd95", r.final.hd95.mean}});
  write_text(o.out, j.dump(2) + "\n");
  out << format_ablation_table(rows);
  manifest.doc["config"] = {{"checkpoint", o.checkpoint}, {"global_checkpoint", o.global_checkpoint},
                            {"variants", o.variants},
                            {"data", data.string()}, {"episode", o.episode.snapshot()}};
  manifest.doc["seeds"] = {{"base", o.seed}};
  manifest.artifact(o.out);
  manifest.finish();
  return kOk;
}

/// Turns a JSON config object into flag tokens placed ahead of the real flags, so explicit
/// flags win (options take the last value given).
std::vector<std::string> config_tokens(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON");
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& x : value) joined += (joined.empty() ? "" : ",") + (x.is_string() ? x.get<std::string>() : x.dump());
      out.push_back(flag);
      out.push_back(joined);
    } else {
      out.push_back(flag);
      out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return out;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Interactive refinement by pixel-wise reinforcement learning"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset split");
  gen_cmd->add_option("--out", gen.out, "Output directory (default $IRIS_DATA_DIR/<split>)");
  gen_cmd->add_option("--count", gen.count, "Number of cases");
  gen_cmd->add_option("--dims", gen.dims, "D,H,W");
  gen_cmd->add_option("--split", gen.split, "train|test")->check(CLI::IsMember({"train", "test"}));
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--noise-stdev", gen.noise_stdev, "Gaussian intensity noise");
  gen_cmd->add_option("--contrast", gen.contrast, "Object intensity offset");

  TrainOpts tr;
  tr.episode.noise = 3;
  auto* train_cmd = app.add_subcommand("train", "Warm-up then interactive A3C training");
  train_cmd->add_option("--data", tr.data, "Training split directory");
  train_cmd->add_option("--out", tr.out, "Checkpoint path");
  train_cmd->add_option("--log", tr.log, "JSON-lines metrics log");
  train_cmd->add_option("--init", tr.init, "Start from this checkpoint (e.g. a warm-up model)");
  train_cmd->add_option("--channels", tr.channels, "Network width C")->check(CLI::PositiveNumber);
  train_cmd->add_option("--workers", tr.workers, "Asynchronous workers")->check(CLI::PositiveNumber);
  train_cmd->add_option("--t-max", tr.t_max, "Rollout segment length");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--lr-schedule", tr.lr_schedule, "linear|constant")->check(CLI::IsMember({"linear", "constant"}));
  train_cmd->add_option("--warmup-epochs", tr.warmup_epochs, "Epochs with zeroed interaction maps");
  train_cmd->add_option("--epochs", tr.epochs, "Interactive epochs");
  train_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many environment steps (0 = all epochs)");
  train_cmd->add_option("--value-coef", tr.value_coef, "Value loss weight");
  train_cmd->add_option("--entropy-coef", tr.entropy_coef, "Entropy bonus weight");
  train_cmd->add_flag("--augment", tr.augment, "Random flips and rotations per episode");
  train_cmd->add_option("--seed", tr.seed, "Base seed");
  tr.episode.add(train_cmd);

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation with the robot user");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint path");
  eval_cmd->add_option("--data", ev.data, "Test split directory");
  eval_cmd->add_option("--out", ev.out, "JSON report path");
  eval_cmd->add_option("--thresholds", ev.thresholds, "DSC thresholds for clicks-to-threshold");
  eval_cmd->add_option("--threads", ev.threads, "Parallel cases")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ev.seed, "Robot seed");
  ev.episode.add(eval_cmd);

  SimulateOpts sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Dump one episode trace as JSON lines");
  sim_cmd->add_option("--checkpoint", sim.checkpoint, "Checkpoint path");
  sim_cmd->add_option("--volume", sim.volume, "IVOL volume");
  sim_cmd->add_option("--gt", sim.gt, "IVOL ground-truth mask");
  sim_cmd->add_option("--data", sim.data, "Dataset directory (used without --volume)");
  sim_cmd->add_option("--case", sim.case_index, "Case index within --data");
  sim_cmd->add_option("--out", sim.out, "Trace path");
  sim_cmd->add_flag("--full", sim.full, "Include per-voxel arrays");
  sim_cmd->add_flag("--sample", sim.sample, "Sample actions instead of argmax");
  sim_cmd->add_option("--seed", sim.seed, "Base seed");
  sim.episode.add(sim_cmd);

  ServeOpts sv;
  auto* serve_cmd = app.add_subcommand("serve", "Run the refinement HTTP service");
  serve_cmd->add_option("--checkpoint", sv.checkpoint, "Checkpoint path");
  serve_cmd->add_option("--host", sv.host, "Bind address");
  serve_cmd->add_option("--port", sv.port, "Port");
  serve_cmd->add_option("--max-upload-mb", sv.max_upload_mb, "Upload size limit");
  serve_cmd->add_option("--manifest", sv.manifest, "Run manifest path");
  sv.episode.add(serve_cmd);

  AblateOpts ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Evaluation-time ablation table");
  ablate_cmd->add_option("--checkpoint", ab.checkpoint, "Boundary-aware checkpoint");
  ablate_cmd->add_option("--global-checkpoint", ab.global_checkpoint, "Global-reward-only checkpoint");
  ablate_cmd->add_option("--variant", ab.variants,
                         "Extra trained model as axis:name:checkpoint, e.g. reward:absolute:abs.ckpt (repeatable)");
  ablate_cmd->add_option("--data", ab.data, "Test split directory");
  ablate_cmd->add_option("--out", ab.out, "JSON table path");
  ablate_cmd->add_option("--threads", ab.threads, "Parallel cases")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--seed", ab.seed, "Robot seed");
  ab.episode.add(ablate_cmd);

  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->add_option("--config", "JSON file of flag defaults (flags override it)");

  try {
    // --config is expanded before parsing so the file's values sit ahead of explicit flags.
    std::vector<std::string> args;
    for (std::size_t i = 0; i < raw_args.size(); ++i) {
      const std::string& a = raw_args[i];
      if (a == "--config" || a.rfind("--config=", 0) == 0) {
        std::string path = a == "--config" ? (i + 1 < raw_args.size() ? raw_args[++i] : "") : a.substr(9);
        if (path.empty()) throw ConfigError("--config needs a path");
        auto toks = config_tokens(path);
        const auto at = args.empty() ? args.end() : args.begin() + 1;
        args.insert(at, toks.begin(), toks.end());
      } else {
        args.push_back(a);
      }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*sim_cmd) return cmd_simulate(sim, out);
    if (*serve_cmd) return cmd_serve(sv, out);
    if (*ablate_cmd) return cmd_ablate(ab, out);
    return kConfigError;
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << json{{"error", one_line(e.what())}, {"kind", "config"}}.dump() << "\n";
    return kConfigError;
  } catch (const ConfigError& e) {
    err << json{{"error", one_line(e.what())}, {"kind", "config"}}.dump() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << json{{"error", one_line(e.what())}, {"kind", "runtime"}}.dump() << "\n";
    return kRuntimeError;
  }
}

}  // namespace iris::cli
