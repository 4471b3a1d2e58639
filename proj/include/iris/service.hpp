#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "iris/env.hpp"
#include "iris/nn.hpp"

namespace httplib {
class Server;
}

namespace iris {

struct ServiceConfig {
  std::shared_ptr<const nn::NetworkParams<float>> params;
  EpisodeConfig episode{};
  std::size_t max_upload_bytes = 64u << 20;
  std::size_t max_voxels = 1u << 24;
  std::chrono::seconds idle_ttl{30 * 60};
  std::chrono::seconds sweep_interval{60};
};

/// A transport-neutral reply: status code, body bytes and MIME type.
struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;

  static ApiResponse json(int status, const nlohmann::json& j);
  static ApiResponse error(int status, const std::string& message);
  nlohmann::json json_body() const { return nlohmann::json::parse(body); }
};

struct SessionUpload {
  std::string volume;              // IVOL bytes
  std::optional<std::string> gt;   // IVOL u8 mask bytes
  std::optional<int> T;
};

/// Owns all refinement sessions. Every public call is safe to issue concurrently; calls on one
/// session are serialised by that session's lock.
class SessionManager {
 public:
  using Clock = std::chrono::steady_clock;

  explicit SessionManager(ServiceConfig cfg);
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  ApiResponse create(const SessionUpload& upload);
  ApiResponse info(const std::string& id);
  ApiResponse slice(const std::string& id, const std::string& axis, long index, const std::string& layer,
                    bool binary = false);
  ApiResponse post_clicks(const std::string& id, const nlohmann::json& body);
  ApiResponse refine(const std::string& id, bool allow_extra);
  ApiResponse export_mask(const std::string& id);
  ApiResponse remove(const std::string& id);

  std::size_t session_count() const;
  /// Drops sessions idle for longer than the TTL as of `now`; returns how many were removed.
  std::size_t sweep_expired(Clock::time_point now);
  /// Runs sweep_expired every sweep_interval on a background thread until the manager dies.
  void start_sweeper();

  const ServiceConfig& config() const { return cfg_; }

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id);

  ServiceConfig cfg_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;

  std::mutex sweep_mu_;
  std::condition_variable sweep_cv_;
  bool stopping_ = false;
  std::thread sweeper_;
};

std::string base64_encode(std::string_view bytes);
/// Throws FormatError on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

/// Installs the HTTP routes for `mgr` on `server`.
void install_routes(httplib::Server& server, SessionManager& mgr);

}  // namespace iris
