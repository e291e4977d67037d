#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwiz/model_server.hpp"

namespace dwiz {

struct BackendConfig {
  std::string id;
  std::string url;   // http://host:port
  int priority = 0;  // lower is preferred; ties keep file order
};

/// {"backends": [{"id", "url", "priority"?}], "timeout_seconds"?, "health_interval_seconds"?}
struct GatewayConfig {
  std::vector<BackendConfig> backends;
  double timeout_seconds = 30.0;
  double health_interval_seconds = 10.0;

  /// Throws InvalidArgument when there are no backends, ids repeat, a URL
  /// is not http://host:port, or a duration is not positive.
  void validate() const;

  static GatewayConfig from_json(const nlohmann::json& j);
  static GatewayConfig load(const std::filesystem::path& path);
};

enum class BackendHealth { Unknown, Healthy, Unhealthy };
std::string to_string(BackendHealth health);

struct UrlParts {
  std::string host;
  int port = 80;
};
UrlParts parse_backend_url(std::string_view url);

/// Installed location of the built UI, if any.
std::optional<std::filesystem::path> default_assets_dir();

/// Gateway behaviour. Upstream calls use real HTTP; nothing here binds a
/// listening socket.
class Gateway {
 public:
  Gateway(GatewayConfig config, std::optional<std::filesystem::path> assets_dir);

  /// Sends the body unchanged to the first reachable backend, healthy
  /// backends first, each group in priority order. The reply carries
  /// X-Backend-Id through `backend_id`.
  struct Forwarded {
    HttpResponse response;
    std::optional<std::string> backend_id;
  };
  Forwarded forward_analyze(const std::string& body);

  /// Probes every backend now and reports id, url, status and its /info.
  HttpResponse backends();

  /// Static UI file for a request path; unknown paths get index.html.
  HttpResponse asset(std::string_view request_path) const;

  /// One health round over all backends.
  void poll_health();
  std::vector<BackendHealth> health_snapshot() const;

  const GatewayConfig& config() const noexcept { return config_; }

 private:
  struct Probe {
    BackendHealth health = BackendHealth::Unhealthy;
    std::optional<nlohmann::json> info;
  };
  Probe probe(std::size_t backend, bool with_info) const;
  void set_health(std::size_t backend, BackendHealth h);

  GatewayConfig config_;
  std::vector<std::size_t> order_;  // backend indices by priority
  std::optional<std::filesystem::path> assets_dir_;
  mutable std::shared_mutex health_mutex_;
  std::vector<BackendHealth> health_;
};

/// HTTP front end for a Gateway plus the background health poller.
class GatewayServer {
 public:
  GatewayServer(std::shared_ptr<Gateway> gateway, const std::string& host, int port);
  ~GatewayServer();
  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  int port() const noexcept;
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dwiz
