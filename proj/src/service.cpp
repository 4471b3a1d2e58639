#include "iris/service.hpp"

#include <array>
#include <cstring>
#include <random>
#include <sstream>

#include <httplib.h>

#include "iris/metrics.hpp"
#include "iris/train.hpp"

namespace iris {

ApiResponse ApiResponse::json(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json", {}}; }

ApiResponse ApiResponse::error(int status, const std::string& message) {
  return json(status, {{"error", message}, {"status", status}});
}

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mu);
  std::ostringstream os;
  os << std::hex;
  for (int i = 0; i < 2; ++i) {
    const std::uint64_t x = rng();
    for (int b = 60; b >= 0; b -= 4) os << ((x >> b) & 0xF);
  }
  return os.str();
}

nlohmann::json dims_json(const Dims& d) { return {d.depth, d.height, d.width}; }
nlohmann::json spacing_json(const Spacing& s) { return {s.z, s.y, s.x}; }

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = std::uint8_t(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= std::uint8_t(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> table;
  table.fill(-1);
  for (int i = 0; i < 64; ++i) table[static_cast<std::uint8_t>(kAlphabet[i])] = i;
  std::string out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  bool padding = false;
  for (char ch : text) {
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    if (ch == '=') {
      padding = true;
      continue;
    }
    const int v = table[static_cast<std::uint8_t>(ch)];
    if (v < 0 || padding) throw FormatError("invalid base64 payload");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  return out;
}

struct SessionManager::Session {
  std::mutex mu;
  std::string id;
  std::unique_ptr<Env> env;
  std::chrono::system_clock::time_point created = std::chrono::system_clock::now();
  Clock::time_point last_used = Clock::now();
  int refines = 0;

  nlohmann::json summary() {
    const Dims& d = env->volume().dims();
    nlohmann::json j{{"id", id},
                     {"dims", dims_json(d)},
                     {"spacing", spacing_json(env->volume().spacing())},
                     {"iteration", env->iteration()},
                     {"T", env->config().T},
                     {"region_count", env->labeling().region_count},
                     {"object_hints", env->hints().object_hints.size()},
                     {"background_hints", env->hints().background_hints.size()},
                     {"created", std::chrono::duration_cast<std::chrono::seconds>(created.time_since_epoch()).count()},
                     {"has_gt", env->ground_truth().has_value()}};
    if (env->ground_truth()) j["dsc"] = dsc(env->prediction(), *env->ground_truth());
    return j;
  }
};

SessionManager::SessionManager(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.episode.record_trace = false;
  if (!cfg_.params) throw std::invalid_argument("service requires network parameters");
  if (cfg_.params->layout.arch.actions != cfg_.episode.actions.size())
    throw std::invalid_argument("checkpoint action count does not match the configured action set");
}

SessionManager::~SessionManager() {
  {
    std::lock_guard lock(sweep_mu_);
    stopping_ = true;
  }
  sweep_cv_.notify_all();
  if (sweeper_.joinable()) sweeper_.join();
}

void SessionManager::start_sweeper() {
  if (sweeper_.joinable()) return;
  sweeper_ = std::thread([this] {
    std::unique_lock lock(sweep_mu_);
    while (!stopping_) {
      if (sweep_cv_.wait_for(lock, cfg_.sweep_interval, [this] { return stopping_; })) break;
      lock.unlock();
      sweep_expired(Clock::now());
      lock.lock();
    }
  });
}

std::size_t SessionManager::sweep_expired(Clock::time_point now) {
  std::unique_lock lock(mu_);
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock slock(it->second->mu, std::try_to_lock);
    if (slock.owns_lock() && now - it->second->last_used > cfg_.idle_ttl) {
      slock.unlock();
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

std::size_t SessionManager::session_count() const {
  std::shared_lock lock(mu_);
  return sessions_.size();
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

ApiResponse SessionManager::create(const SessionUpload& upload) {
  if (upload.volume.size() > cfg_.max_upload_bytes || (upload.gt && upload.gt->size() > cfg_.max_upload_bytes))
    return ApiResponse::error(413, "payload exceeds " + std::to_string(cfg_.max_upload_bytes) + " bytes");
  Volume raw;
  std::optional<Mask> gt;
  try {
    raw = decode_volume(upload.volume);
    if (upload.gt) gt = decode_mask(*upload.gt).first;
  } catch (const FormatError& e) {
    return ApiResponse::error(400, std::string("malformed volume: ") + e.what());
  }
  if (raw.size() > cfg_.max_voxels)
    return ApiResponse::error(413, "volume has " + std::to_string(raw.size()) + " voxels, limit " +
                                       std::to_string(cfg_.max_voxels));
  if (gt && !(gt->dims() == raw.dims()))
    return ApiResponse::error(400, "ground truth dims " + to_string(gt->dims()) + " do not match volume " +
                                       to_string(raw.dims()));
  EpisodeConfig ec = cfg_.episode;
  if (upload.T) {
    if (*upload.T < 1) return ApiResponse::error(400, "T must be >= 1");
    ec.T = *upload.T;
  }
  auto s = std::make_shared<Session>();
  s->id = new_session_id();
  s->env = std::make_unique<Env>(normalize(raw), std::move(gt), ec);
  nlohmann::json body = s->summary();
  {
    std::unique_lock lock(mu_);
    sessions_.emplace(s->id, s);
  }
  return ApiResponse::json(201, body);
}

ApiResponse SessionManager::info(const std::string& id) {
  auto s = find(id);
  if (!s) return ApiResponse::error(404, "unknown session " + id);
  std::lock_guard lock(s->mu);
  s->last_used = Clock::now();
  return ApiResponse::json(200, s->summary());
}

ApiResponse SessionManager::slice(const std::string& id, const std::string& axis, long index, const std::string& layer,
                                  bool binary) {
  auto s = find(id);
  if (!s) return ApiResponse::error(404, "unknown session " + id);
  std::lock_guard lock(s->mu);
  s->last_used = Clock::now();
  Env& env = *s->env;
  const Dims& d = env.volume().dims();

  int ax;
  if (axis == "z")
    ax = 0;
  else if (axis == "y")
    ax = 1;
  else if (axis == "x")
    ax = 2;
  else
    return ApiResponse::error(400, "axis must be z, y or x");
  if (index < 0 || index >= d.extent(ax))
    return ApiResponse::error(416, "slice index " + std::to_string(index) + " outside [0, " +
                                       std::to_string(d.extent(ax)) + ")");

  const EnvState st = env.state();
  std::span<const double> real;
  std::vector<double> pred;
  const std::vector<std::int32_t>* labels = nullptr;
  if (layer == "intensity")
    real = st.intensity;
  else if (layer == "probability")
    real = st.probability;
  else if (layer == "h_plus")
    real = st.h_plus;
  else if (layer == "h_minus")
    real = st.h_minus;
  else if (layer == "prediction") {
    pred.resize(st.probability.size());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = st.probability[i] > 0.5 ? 1.0 : 0.0;
    real = pred;
  } else if (layer == "supervoxel_labels")
    labels = &env.labeling().labels;
  else
    return ApiResponse::error(400, "unknown layer " + layer);

  const int rows = ax == 0 ? d.height : d.depth;
  const int cols = ax == 2 ? d.height : d.width;
  auto at = [&](int r, int c) {
    const Index3 p = ax == 0 ? Index3{static_cast<int>(index), r, c}
                     : ax == 1 ? Index3{r, static_cast<int>(index), c}
                               : Index3{r, c, static_cast<int>(index)};
    return flat_index(d, p);
  };
  const bool integer = labels != nullptr || layer == "prediction";

  if (binary) {
    ApiResponse r;
    r.content_type = "application/octet-stream";
    r.headers["X-Shape"] = std::to_string(rows) + "," + std::to_string(cols);
    r.headers["X-Dtype"] = labels ? "i32" : "f64";
    r.body.resize(static_cast<std::size_t>(rows) * cols * (labels ? 4 : 8));
    char* out = r.body.data();
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x) {
        if (labels) {
          const std::int32_t v = (*labels)[at(y, x)];
          std::memcpy(out, &v, 4);
          out += 4;
        } else {
          const double v = real[at(y, x)];
          std::memcpy(out, &v, 8);
          out += 8;
        }
      }
    return r;
  }

  nlohmann::json data = nlohmann::json::array();
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      const std::size_t i = at(y, x);
      if (labels)
        data.push_back((*labels)[i]);
      else if (integer)
        data.push_back(static_cast<int>(real[i]));
      else
        data.push_back(real[i]);
    }
  return ApiResponse::json(200, {{"axis", axis},
                                 {"index", index},
                                 {"layer", layer},
                                 {"iteration", env.iteration()},
                                 {"shape", {rows, cols}},
                                 {"data", std::move(data)}});
}

ApiResponse SessionManager::post_clicks(const std::string& id, const nlohmann::json& body) {
  auto s = find(id);
  if (!s) return ApiResponse::error(404, "unknown session " + id);
  const nlohmann::json& list = body.is_object() && body.contains("clicks") ? body["clicks"] : body;
  if (!list.is_array()) return ApiResponse::error(400, "expected a list of clicks");
  std::vector<Click> clicks;
  try {
    for (const auto& c : list) clicks.push_back(click_from_json(c));
  } catch (const std::exception& e) {
    return ApiResponse::error(400, std::string("malformed click: ") + e.what());
  }
  std::lock_guard lock(s->mu);
  s->last_used = Clock::now();
  Env& env = *s->env;
  for (const Click& c : clicks)
    if (!in_grid(env.volume().dims(), c.position))
      return ApiResponse::error(422, "click position [" + std::to_string(c.position.z) + "," +
                                         std::to_string(c.position.y) + "," + std::to_string(c.position.x) +
                                         "] outside grid " + to_string(env.volume().dims()));
  const ExpandResult r = env.add_clicks(clicks);
  return ApiResponse::json(200, {{"object_added", r.object_added},
                                 {"background_added", r.background_added},
                                 {"object_hints", env.hints().object_hints.size()},
                                 {"background_hints", env.hints().background_hints.size()},
                                 {"iteration", env.iteration()},
                                 {"region_count", env.labeling().region_count}});
}

ApiResponse SessionManager::refine(const std::string& id, bool allow_extra) {
  auto s = find(id);
  if (!s) return ApiResponse::error(404, "unknown session " + id);
  std::lock_guard lock(s->mu);
  s->last_used = Clock::now();
  Env& env = *s->env;
  if (env.done()) {
    if (!allow_extra)
      return ApiResponse::error(409, "sequence complete after " + std::to_string(env.config().T) +
                                         " iterations; pass allow_extra=true to continue");
    env.extend_horizon(1);
  }
  const EnvState st = env.refresh_maps();
  const ActionField actions = nn::argmax_actions(nn::forward(*cfg_.params, state_tensor(st)).policy);
  const ProbMap before = env.probability();
  env.step(actions);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += before[i] != env.probability()[i];
  ++s->refines;
  nlohmann::json j{{"iteration", env.iteration()},
                   {"changed_voxels", changed},
                   {"done", env.done()},
                   {"region_count", env.labeling().region_count}};
  if (env.ground_truth()) j["dsc"] = dsc(env.prediction(), *env.ground_truth());
  return ApiResponse::json(200, j);
}

ApiResponse SessionManager::export_mask(const std::string& id) {
  auto s = find(id);
  if (!s) return ApiResponse::error(404, "unknown session " + id);
  std::lock_guard lock(s->mu);
  s->last_used = Clock::now();
  ApiResponse r;
  r.content_type = "application/octet-stream";
  r.body = encode_ivol(s->env->prediction(), s->env->volume().spacing());
  return r;
}

ApiResponse SessionManager::remove(const std::string& id) {
  std::unique_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return ApiResponse::error(404, "unknown session " + id);
  std::shared_ptr<Session> s = it->second;
  sessions_.erase(it);
  lock.unlock();
  std::lock_guard slock(s->mu);
  return ApiResponse{204, "", "application/json", {}};
}

// HTTP layer -----------------------------------------------------------------------

namespace {

void send(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  if (r.status != 204) res.set_content(r.body, r.content_type);
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes"; }

SessionUpload parse_upload(const httplib::Request& req) {
  SessionUpload up;
  if (req.is_multipart_form_data()) {
    if (!req.has_file("volume")) throw FormatError("multipart upload lacks a 'volume' part");
    up.volume = req.get_file_value("volume").content;
    if (req.has_file("gt")) up.gt = req.get_file_value("gt").content;
    if (req.has_file("T")) up.T = std::stoi(req.get_file_value("T").content);
    return up;
  }
  const std::string type = req.get_header_value("Content-Type");
  if (type.rfind("application/octet-stream", 0) == 0) {
    up.volume = req.body;
    return up;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("request body is neither JSON, multipart nor raw IVOL");
  }
  if (!j.is_object() || !j.contains("volume") || !j["volume"].is_string())
    throw FormatError("JSON upload needs a base64 'volume' string");
  up.volume = base64_decode(j["volume"].get<std::string>());
  if (j.contains("gt") && !j["gt"].is_null()) up.gt = base64_decode(j["gt"].get<std::string>());
  if (j.contains("T") && !j["T"].is_null()) up.T = j["T"].get<int>();
  return up;
}

}  // namespace

void install_routes(httplib::Server& server, SessionManager& mgr) {
  server.set_payload_max_length(mgr.config().max_upload_bytes * 2 + 4096);

  server.Post("/sessions", [&mgr](const httplib::Request& req, httplib::Response& res) {
    try {
      send(res, mgr.create(parse_upload(req)));
    } catch (const std::exception& e) {
      send(res, ApiResponse::error(400, e.what()));
    }
  });
  server.Get(R"(/sessions/([0-9a-f]+))", [&mgr](const httplib::Request& req, httplib::Response& res) {
    send(res, mgr.info(req.matches[1]));
  });
  server.Get(R"(/sessions/([0-9a-f]+)/slice)", [&mgr](const httplib::Request& req, httplib::Response& res) {
    const std::string axis = req.has_param("axis") ? req.get_param_value("axis") : "z";
    const std::string layer = req.has_param("layer") ? req.get_param_value("layer") : "intensity";
    long index = 0;
    if (req.has_param("index")) {
      try {
        std::size_t used = 0;
        const std::string raw = req.get_param_value("index");
        index = std::stol(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
      } catch (const std::exception&) {
        send(res, ApiResponse::error(400, "index must be an integer"));
        return;
      }
    }
    const bool binary = req.has_param("format") && req.get_param_value("format") == "binary";
    send(res, mgr.slice(req.matches[1], axis, index, layer, binary));
  });
  server.Post(R"(/sessions/([0-9a-f]+)/clicks)", [&mgr](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = req.body.empty() ? nlohmann::json::array() : nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      send(res, ApiResponse::error(400, std::string("malformed JSON: ") + e.what()));
      return;
    }
    send(res, mgr.post_clicks(req.matches[1], body));
  });
  server.Post(R"(/sessions/([0-9a-f]+)/refine)", [&mgr](const httplib::Request& req, httplib::Response& res) {
    bool extra = req.has_param("allow_extra") && truthy(req.get_param_value("allow_extra"));
    if (!req.body.empty()) {
      try {
        const auto j = nlohmann::json::parse(req.body);
        if (j.is_object() && j.contains("allow_extra")) extra = extra || j["allow_extra"].get<bool>();
      } catch (const nlohmann::json::exception& e) {
        send(res, ApiResponse::error(400, std::string("malformed JSON: ") + e.what()));
        return;
      }
    }
    send(res, mgr.refine(req.matches[1], extra));
  });
  server.Get(R"(/sessions/([0-9a-f]+)/mask)", [&mgr](const httplib::Request& req, httplib::Response& res) {
    send(res, mgr.export_mask(req.matches[1]));
  });
  server.Delete(R"(/sessions/([0-9a-f]+))", [&mgr](const httplib::Request& req, httplib::Response& res) {
    send(res, mgr.remove(req.matches[1]));
  });
}

}  // namespace iris
