#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "iris/nn.hpp"
#include "iris/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = iris::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("iris_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

void gen(const Scratch& s, const std::string& name, int count, const std::string& split = "train",
         const std::string& dims = "1,16,16") {
  const auto r = run({"gen-data", "--out", s / name, "--count", std::to_string(count), "--dims", dims, "--split",
                      split, "--seed", "7"});
  REQUIRE(r.code == 0);
}

std::string tiny_train(const Scratch& s, const std::string& name, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"train",      "--data",   s / "tr",           "--out", s / name, "--workers",
                                "1",          "--seed",   "3",                "--channels", "2",  "--warmup-epochs",
                                "0",          "--epochs", "1"};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return s / name;
}

}  // namespace

TEST_CASE("gen-data writes the requested pairs and an index, byte-identical per seed") {
  Scratch s("gen");
  gen(s, "a", 5);
  gen(s, "b", 5);
  const json index = json::parse(slurp(s / "a/index.json"));
  CHECK(index["cases"].size() == 5);
  CHECK(index["dims"] == json::array({1, 16, 16}));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(s / "a")) {
    ++files;
    CHECK(slurp(e.path()) == slurp(fs::path(s / "b") / e.path().filename()));
  }
  CHECK(files == 11);
  const auto v = iris::load_volume(fs::path(s / "a") / "case_0003_image.ivol");
  CHECK(v.dims() == iris::Dims{1, 16, 16});
  CHECK(fs::exists(s / "a.manifest.json"));
  const json m = json::parse(slurp(s / "a.manifest.json"));
  for (const auto key : {"command", "config", "seeds", "artifacts", "started", "finished"}) CHECK(m.contains(key));
  CHECK(m["command"] == "gen-data");
}

TEST_CASE("gen-data with count 0 writes an empty index and succeeds") {
  Scratch s("gen0");
  gen(s, "empty", 0);
  const json index = json::parse(slurp(s / "empty/index.json"));
  CHECK(index["cases"].empty());
}

TEST_CASE("IRIS_DATA_DIR sets the default dataset root") {
  Scratch s("envdir");
  setenv("IRIS_DATA_DIR", s.dir.c_str(), 1);
  const auto r = run({"gen-data", "--count", "1", "--dims", "1,8,8", "--split", "test"});
  unsetenv("IRIS_DATA_DIR");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(s.dir / "test" / "index.json"));
}

TEST_CASE("config errors exit 1 and runtime errors exit 2, each with one JSON line on stderr") {
  Scratch s("errors");
  gen(s, "tr", 2);

  auto single_json_line = [](const std::string& err, const std::string& kind) {
    REQUIRE(std::count(err.begin(), err.end(), '\n') == 1);
    const json j = json::parse(err);
    CHECK(j["kind"] == kind);
    CHECK(j.contains("error"));
  };

  auto r = run({"train", "--data", s / "tr", "--t-max", "5"});
  CHECK(r.code == 1);
  single_json_line(r.err, "config");

  r = run({"train", "--data", s / "tr", "--no-such-flag"});
  CHECK(r.code == 1);
  single_json_line(r.err, "config");

  r = run({"eval", "--checkpoint", s / "missing.ckpt", "--data", s / "tr"});
  CHECK(r.code == 2);
  single_json_line(r.err, "runtime");

  r = run({"gen-data", "--count", "-1", "--out", s / "x"});
  CHECK(r.code == 1);

  r = run({"train", "--data", s / "nowhere"});
  CHECK(r.code == 2);
  single_json_line(r.err, "runtime");
}

TEST_CASE("help exits 0") {
  const auto r = run({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("gen-data") != std::string::npos);
}

TEST_CASE("train defaults encode T=4, N_c=6, gamma 0.95 and the six-action set") {
  Scratch s("defaults");
  gen(s, "tr", 2);
  const auto ckpt = tiny_train(s, "m.ckpt");
  const json m = json::parse(slurp(ckpt + ".manifest.json"));
  const auto& ep = m["config"]["episode"];
  CHECK(ep["T"] == 4);
  CHECK(ep["clicks"] == 6);
  CHECK(ep["gamma"] == 0.95);
  CHECK(ep["lambda"] == 0.5);
  CHECK(ep["action_set"] == "0.1,0.2,0.4");
  CHECK(iris::nn::load_checkpoint(ckpt).layout.arch.actions == 6);
  CHECK(iris::nn::load_checkpoint(ckpt).layout.arch.kernel_depth == 1);
}

TEST_CASE("a custom action set sets the network action count") {
  Scratch s("actions");
  gen(s, "tr", 1);
  const auto ckpt = tiny_train(s, "m.ckpt", {"--action-set", "0.05,0.3"});
  CHECK(iris::nn::load_checkpoint(ckpt).layout.arch.actions == 4);
}

TEST_CASE("single-worker training with the same seed gives identical checkpoints") {
  Scratch s("determinism");
  gen(s, "tr", 2);
  CHECK(slurp(tiny_train(s, "a.ckpt")) == slurp(tiny_train(s, "b.ckpt")));
}

TEST_CASE("flags override the config file, which overrides built-in defaults") {
  Scratch s("config");
  gen(s, "tr", 1);
  {
    std::ofstream f(s / "cfg.json");
    f << R"({"gamma": 0.8, "T": 3, "t_max": 3, "no_interaction": true, "channels": 3})";
  }
  const auto ckpt = tiny_train(s, "m.ckpt", {"--config", s / "cfg.json", "--T", "2", "--t-max", "2"});
  const json m = json::parse(slurp(ckpt + ".manifest.json"));
  CHECK(m["config"]["episode"]["gamma"] == 0.8);
  CHECK(m["config"]["episode"]["T"] == 2);
  CHECK(m["config"]["t_max"] == 2);
  CHECK(m["config"]["episode"]["no_interaction"] == true);

  std::ofstream(s / "bad.json") << "{not json";
  CHECK(run({"train", "--config", s / "bad.json"}).code == 1);
}

TEST_CASE("eval reports per-iteration metrics as JSON with sorted keys") {
  Scratch s("eval");
  gen(s, "tr", 1);
  gen(s, "te", 2, "test");
  const auto ckpt = tiny_train(s, "m.ckpt");
  auto r = run({"eval", "--checkpoint", ckpt, "--data", s / "te", "--out", s / "rep.json", "--noise", "3"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("DSC") != std::string::npos);
  const std::string text = slurp(s / "rep.json");
  const json rep = json::parse(text);
  CHECK(rep["per_iteration"].size() == 4);
  CHECK(rep["cases"].size() == 2);
  CHECK(text == rep.dump(2) + "\n");

  r = run({"eval", "--checkpoint", ckpt, "--data", s / "te", "--out", s / "none.json", "--no-interaction",
           "--clicking", "point"});
  CHECK(r.code == 0);
  r = run({"eval", "--checkpoint", ckpt, "--data", s / "te", "--clicking", "sideways"});
  CHECK(r.code == 1);
}

TEST_CASE("simulate writes T trace lines with reward decomposition, reproducibly") {
  Scratch s("sim");
  gen(s, "tr", 1);
  gen(s, "te", 1, "test");
  const auto ckpt = tiny_train(s, "m.ckpt");
  auto sim = [&](const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"simulate", "--checkpoint", ckpt, "--data", s / "te", "--out", s / out,
                                  "--seed", "4", "--noise", "2"};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = run(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return slurp(s / out);
  };
  const std::string a = sim("a.jsonl", {"--full"});
  CHECK(a == sim("b.jsonl", {"--full"}));
  std::istringstream lines(a);
  int n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    const json j = json::parse(line);
    CHECK(j["iteration"] == n + 1);
    CHECK(j["reward_mean"].contains("global"));
    CHECK(j["reward_mean"].contains("boundary"));
    CHECK(j["reward"]["boundary"].size() == 256);
    CHECK(j["probability"].size() == 256);
    CHECK(j["h_plus"].size() == 256);
    CHECK(j["supervoxels"].size() == 256);
  }
  CHECK(n == 4);

  std::istringstream three(sim("c.jsonl", {"--T", "3"}));
  int m = 0;
  for (std::string line; std::getline(three, line);) ++m;
  CHECK(m == 3);

  const auto vol = fs::path(s / "te") / "case_0000_image.ivol";
  const auto r = run({"simulate", "--checkpoint", ckpt, "--volume", vol.string(), "--out", s / "x.jsonl"});
  CHECK(r.code == 1);  // the robot user needs --gt
}

TEST_CASE("ablate emits one row per variant") {
  Scratch s("ablate");
  gen(s, "tr", 1);
  gen(s, "te", 1, "test", "1,12,12");
  const auto ckpt = tiny_train(s, "m.ckpt");
  const auto r = run({"ablate", "--checkpoint", ckpt, "--global-checkpoint", ckpt, "--data", s / "te", "--out",
                      s / "ab.json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json rows = json::parse(slurp(s / "ab.json"));
  std::set<std::string> axes;
  for (const auto& row : rows) axes.insert(row["axis"].get<std::string>());
  CHECK(axes.count("reward") == 1);
  CHECK(axes.count("clicks") == 1);
  CHECK(axes.count("supervoxel size") == 1);
}

TEST_CASE("ablate evaluates extra trained variants with their own action sets") {
  Scratch s("ablate_variants");
  gen(s, "tr", 1);
  gen(s, "te", 1, "test", "1,12,12");
  const auto ckpt = tiny_train(s, "m.ckpt");
  const auto four = tiny_train(s, "four.ckpt", {"--action-set", "0.1,0.3"});
  const auto r = run({"ablate", "--checkpoint", ckpt, "--variant", "action set:0.1,0.3:" + four, "--variant",
                      "reward:absolute:" + ckpt, "--data", s / "te", "--out", s / "ab.json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::set<std::string> names;
  for (const auto& row : json::parse(slurp(s / "ab.json")))
    names.insert(row["axis"].get<std::string>() + "/" + row["name"].get<std::string>());
  CHECK(names.count("action set/0.1,0.3") == 1);
  CHECK(names.count("reward/absolute") == 1);
  CHECK(run({"ablate", "--checkpoint", ckpt, "--variant", "no-colons", "--data", s / "te"}).code == 1);
}
