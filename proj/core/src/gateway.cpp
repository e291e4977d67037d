#include "dwiz/gateway.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stop_token>
#include <thread>

#include <httplib.h>

namespace dwiz {
namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

constexpr double kProbeTimeoutCap = 5.0;

void set_timeouts(httplib::Client& client, double seconds) {
  const auto usec = static_cast<long long>(seconds * 1e6);
  const time_t sec = static_cast<time_t>(usec / 1000000);
  const time_t rest = static_cast<time_t>(usec % 1000000);
  client.set_connection_timeout(sec, rest);
  client.set_read_timeout(sec, rest);
  client.set_write_timeout(sec, rest);
}

std::string content_type_for(const std::filesystem::path& p) {
  static const std::pair<std::string_view, std::string_view> kTypes[] = {
      {".html", "text/html; charset=utf-8"},
      {".htm", "text/html; charset=utf-8"},
      {".js", "text/javascript; charset=utf-8"},
      {".mjs", "text/javascript; charset=utf-8"},
      {".css", "text/css; charset=utf-8"},
      {".json", "application/json"},
      {".map", "application/json"},
      {".svg", "image/svg+xml"},
      {".png", "image/png"},
      {".jpg", "image/jpeg"},
      {".jpeg", "image/jpeg"},
      {".gif", "image/gif"},
      {".ico", "image/x-icon"},
      {".txt", "text/plain; charset=utf-8"},
      {".woff", "font/woff"},
      {".woff2", "font/woff2"},
      {".wasm", "application/wasm"},
  };
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [e, type] : kTypes) {
    if (ext == e) return std::string(type);
  }
  return "application/octet-stream";
}

std::optional<std::string> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double positive_number(const nlohmann::json& v, const char* key) {
  if (!v.is_number()) throw InvalidArgument(std::string("gateway config: ") + key + " must be a number");
  return v.get<double>();
}

}  // namespace

std::string to_string(BackendHealth health) {
  switch (health) {
    case BackendHealth::Healthy:
      return "ok";
    case BackendHealth::Unhealthy:
      return "unhealthy";
    case BackendHealth::Unknown:
      break;
  }
  return "unknown";
}

UrlParts parse_backend_url(std::string_view url) {
  constexpr std::string_view scheme = "http://";
  auto bad = [&] { return InvalidArgument("backend url '" + std::string(url) + "' is not of the form http://host:port"); };
  if (url.substr(0, scheme.size()) != scheme) throw bad();
  std::string_view rest = url.substr(scheme.size());
  while (!rest.empty() && rest.back() == '/') rest.remove_suffix(1);
  if (rest.empty() || rest.find('/') != std::string_view::npos) throw bad();
  UrlParts parts;
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos) {
    parts.host = std::string(rest);
    return parts;
  }
  parts.host = std::string(rest.substr(0, colon));
  const auto port_text = rest.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), parts.port);
  if (parts.host.empty() || ec != std::errc{} || ptr != port_text.data() + port_text.size() || parts.port <= 0 ||
      parts.port > 65535) {
    throw bad();
  }
  return parts;
}

void GatewayConfig::validate() const {
  if (backends.empty()) throw InvalidArgument("gateway config lists no model server backends");
  std::set<std::string> ids;
  for (const auto& b : backends) {
    if (b.id.empty()) throw InvalidArgument("backend id must not be empty");
    if (!ids.insert(b.id).second) throw InvalidArgument("duplicate backend id '" + b.id + "'");
    parse_backend_url(b.url);
  }
  if (!(timeout_seconds > 0.0)) throw InvalidArgument("timeout_seconds must be positive");
  if (!(health_interval_seconds > 0.0)) throw InvalidArgument("health_interval_seconds must be positive");
}

GatewayConfig GatewayConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("gateway config must be a JSON object");
  GatewayConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "timeout_seconds") {
      c.timeout_seconds = positive_number(*it, "timeout_seconds");
    } else if (key == "health_interval_seconds") {
      c.health_interval_seconds = positive_number(*it, "health_interval_seconds");
    } else if (key == "backends") {
      if (!it->is_array()) throw InvalidArgument("gateway config: backends must be an array");
      for (const auto& b : *it) {
        if (!b.is_object() || !b.contains("id") || !b.contains("url") || !b["id"].is_string() ||
            !b["url"].is_string()) {
          throw InvalidArgument("gateway config: each backend needs string \"id\" and \"url\"");
        }
        BackendConfig bc;
        bc.id = b["id"].get<std::string>();
        bc.url = b["url"].get<std::string>();
        if (b.contains("priority")) {
          if (!b["priority"].is_number_integer()) throw InvalidArgument("gateway config: priority must be an integer");
          bc.priority = b["priority"].get<int>();
        }
        c.backends.push_back(std::move(bc));
      }
    } else {
      throw InvalidArgument("gateway config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

GatewayConfig GatewayConfig::load(const std::filesystem::path& path) {
  auto text = read_file(path);
  if (!text) throw InvalidArgument("cannot read gateway config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("gateway config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::optional<std::filesystem::path> default_assets_dir() {
#ifdef DWIZ_ASSETS_INSTALL_DIR
  std::filesystem::path p(DWIZ_ASSETS_INSTALL_DIR);
  std::error_code ec;
  if (std::filesystem::is_regular_file(p / "index.html", ec)) return p;
#endif
  return std::nullopt;
}

Gateway::Gateway(GatewayConfig config, std::optional<std::filesystem::path> assets_dir)
    : config_(std::move(config)), assets_dir_(std::move(assets_dir)) {
  config_.validate();
  order_.resize(config_.backends.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::stable_sort(order_.begin(), order_.end(),
                   [&](std::size_t a, std::size_t b) { return config_.backends[a].priority < config_.backends[b].priority; });
  health_.assign(config_.backends.size(), BackendHealth::Unknown);
}

void Gateway::set_health(std::size_t backend, BackendHealth h) {
  std::unique_lock lock(health_mutex_);
  health_[backend] = h;
}

std::vector<BackendHealth> Gateway::health_snapshot() const {
  std::shared_lock lock(health_mutex_);
  return health_;
}

Gateway::Probe Gateway::probe(std::size_t backend, bool with_info) const {
  const auto url = parse_backend_url(config_.backends[backend].url);
  httplib::Client client(url.host, url.port);
  set_timeouts(client, std::min(config_.timeout_seconds, kProbeTimeoutCap));
  Probe p;
  auto res = client.Get("/health");
  if (!res || res->status != 200) return p;
  p.health = BackendHealth::Healthy;
  if (with_info) {
    if (auto info = client.Get("/info"); info && info->status == 200) {
      try {
        p.info = nlohmann::json::parse(info->body);
      } catch (const nlohmann::json::parse_error&) {
        p.info.reset();
      }
    }
  }
  return p;
}

void Gateway::poll_health() {
  for (std::size_t i = 0; i < config_.backends.size(); ++i) set_health(i, probe(i, false).health);
}

Gateway::Forwarded Gateway::forward_analyze(const std::string& body) {
  const auto health = health_snapshot();
  std::vector<std::size_t> candidates;
  for (std::size_t i : order_) {
    if (health[i] != BackendHealth::Unhealthy) candidates.push_back(i);
  }
  for (std::size_t i : order_) {
    if (health[i] == BackendHealth::Unhealthy) candidates.push_back(i);
  }

  std::string last_id;
  for (std::size_t i : candidates) {
    const BackendConfig& backend = config_.backends[i];
    last_id = backend.id;
    const auto url = parse_backend_url(backend.url);
    httplib::Client client(url.host, url.port);
    set_timeouts(client, config_.timeout_seconds);
    const auto started = Clock::now();
    auto res = client.Post("/analyze", body, "application/json");
    if (res) {
      if (res->status == 503) {
        set_health(i, BackendHealth::Unhealthy);
        continue;
      }
      set_health(i, BackendHealth::Healthy);
      std::string type = res->get_header_value("Content-Type");
      if (type.empty()) type = "application/json";
      return {{res->status, std::move(res->body), std::move(type)}, backend.id};
    }
    const double elapsed = std::chrono::duration<double>(Clock::now() - started).count();
    if (res.error() == httplib::Error::Read && elapsed >= config_.timeout_seconds * 0.9) {
      Json body_json{{"code", "backend_timeout"},
                     {"message", "model server did not answer in time"},
                     {"backend_id", backend.id}};
      return {{504, body_json.dump(), "application/json"}, backend.id};
    }
    set_health(i, BackendHealth::Unhealthy);
  }
  Json body_json{{"code", "backend_unavailable"},
                 {"message", "no model server could be reached"},
                 {"backend_id", last_id}};
  return {{502, body_json.dump(), "application/json"}, std::nullopt};
}

HttpResponse Gateway::backends() {
  Json list = Json::array();
  for (std::size_t i = 0; i < config_.backends.size(); ++i) {
    const auto& b = config_.backends[i];
    auto p = probe(i, true);
    set_health(i, p.health);
    Json entry{{"id", b.id}, {"url", b.url}, {"priority", b.priority}, {"status", to_string(p.health)}};
    entry["info"] = p.info ? Json(*p.info) : Json(nullptr);
    list.push_back(std::move(entry));
  }
  return {200, Json{{"backends", std::move(list)}}.dump(), "application/json"};
}

HttpResponse Gateway::asset(std::string_view request_path) const {
  auto unavailable = [] {
    return HttpResponse{503,
                        Json{{"code", "assets_unavailable"},
                             {"message", "the web UI has not been built or installed; pass --assets-dir"}}
                            .dump(),
                        "application/json"};
  };
  if (!assets_dir_) return unavailable();
  const auto index = *assets_dir_ / "index.html";
  std::error_code ec;
  if (!std::filesystem::is_regular_file(index, ec)) return unavailable();

  std::filesystem::path target = index;
  std::string_view rel = request_path;
  while (!rel.empty() && rel.front() == '/') rel.remove_prefix(1);
  if (!rel.empty()) {
    const std::filesystem::path candidate = std::filesystem::path(rel).lexically_normal();
    const bool escapes = candidate.is_absolute() || (!candidate.empty() && *candidate.begin() == "..");
    if (!escapes && std::filesystem::is_regular_file(*assets_dir_ / candidate, ec)) target = *assets_dir_ / candidate;
  }
  auto content = read_file(target);
  if (!content) return unavailable();
  return {200, std::move(*content), content_type_for(target)};
}

struct GatewayServer::Impl {
  std::shared_ptr<Gateway> gateway;
  httplib::Server http;
  int port = 0;
  std::thread thread;
  std::jthread poller;
};

namespace {

void send(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

GatewayServer::GatewayServer(std::shared_ptr<Gateway> gateway, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()) {
  if (!gateway) throw InvalidArgument("gateway server needs a gateway");
  impl_->gateway = std::move(gateway);
  Gateway* gw = impl_->gateway.get();
  auto& http = impl_->http;

  http.set_payload_max_length(16u << 20);
  http.Post("/api/analyze", [gw](const httplib::Request& req, httplib::Response& res) {
    auto fwd = gw->forward_analyze(req.body);
    send(res, fwd.response);
    if (fwd.backend_id) res.set_header("X-Backend-Id", *fwd.backend_id);
  });
  http.Get("/api/backends", [gw](const httplib::Request&, httplib::Response& res) { send(res, gw->backends()); });
  http.Get("/api/.*", [](const httplib::Request&, httplib::Response& res) {
    send(res, {404, error_body("not_found", "no such endpoint"), "application/json"});
  });
  http.Get(".*", [gw](const httplib::Request& req, httplib::Response& res) { send(res, gw->asset(req.path)); });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    send(res, {500, error_body("internal_error", "internal server error"), "application/json"});
  });
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) send(res, {404, error_body("not_found", "no such endpoint"), "application/json"});
    else if (res.status == 413)
      send(res, {413, error_body("payload_too_large", "request body too large"), "application/json"});
    else if (res.status >= 400) send(res, {res.status, error_body("http_error", "request rejected"), "application/json"});
  });

  if (port == 0) {
    impl_->port = http.bind_to_any_port(host);
    if (impl_->port < 0) throw Error("cannot bind " + host);
  } else {
    if (!http.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    impl_->port = port;
  }

  const auto interval = std::chrono::duration<double>(gw->config().health_interval_seconds);
  impl_->poller = std::jthread([gw, interval](std::stop_token stop) {
    std::mutex m;
    std::condition_variable_any cv;
    while (!stop.stop_requested()) {
      gw->poll_health();
      std::unique_lock lock(m);
      cv.wait_for(lock, stop, interval, [] { return false; });
    }
  });
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

GatewayServer::~GatewayServer() {
  stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int GatewayServer::port() const noexcept { return impl_->port; }

void GatewayServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void GatewayServer::stop() {
  impl_->poller.request_stop();
  impl_->http.stop();
}

}  // namespace dwiz
