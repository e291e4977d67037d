#include "dwiz/model_server.hpp"

#include <charconv>
#include <thread>

#include <httplib.h>

#include "dwiz/model_io.hpp"
#include "dwiz/tags.hpp"

namespace dwiz {
namespace {

using Json = nlohmann::ordered_json;

constexpr std::size_t kMaxBodyBytes = 16u << 20;

HttpResponse json_response(int status, std::string body) { return {status, std::move(body), "application/json"}; }

HttpResponse error_response(int status, std::string_view code, std::string_view message) {
  return json_response(status, error_body(code, message));
}

void send(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

void ServerConfig::validate() const {
  if (limits.max_utterances == 0) throw InvalidArgument("max utterances per request must be positive");
  if (limits.max_utterance_chars == 0) throw InvalidArgument("max characters per utterance must be positive");
  if (top_k < 1 || top_k > kNumTags) throw InvalidArgument("top-k must be between 1 and " + std::to_string(kNumTags));
  if (port < 0 || port > 65535) throw InvalidArgument("port out of range: " + std::to_string(port));
}

std::pair<std::string, int> parse_bind_address(std::string_view bind) {
  std::string host = "127.0.0.1";
  std::string_view port_text = bind;
  if (const auto colon = bind.rfind(':'); colon != std::string_view::npos) {
    if (colon > 0) host = std::string(bind.substr(0, colon));
    port_text = bind.substr(colon + 1);
  }
  int port = -1;
  const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port < 0 || port > 65535) {
    throw InvalidArgument("bad bind address '" + std::string(bind) + "' (expected host:port)");
  }
  return {host, port};
}

ModelService::ModelService(std::shared_ptr<const NoContextModel> no_context,
                           std::shared_ptr<const ContextModel> context, Checksums file_checksums,
                           std::size_t default_top_k, RequestLimits limits)
    : analyzer_(std::move(no_context), std::move(context)),
      checksums_(file_checksums),
      default_top_k_(default_top_k),
      limits_(limits) {
  const auto& nc = analyzer_.no_context_model();
  const auto& cx = analyzer_.context_model();
  if (default_top_k_ < 1 || default_top_k_ > nc.tags().size()) throw InvalidArgument("default top-k out of range");

  Json tags = Json::array();
  const TagSet& swda = TagSet::swda();
  for (std::size_t i = 0; i < nc.tags().size(); ++i) {
    const auto& m = nc.tags()[i];
    const auto idx = swda.find(m);
    tags.push_back({{"index", i}, {"tag", m}, {"name", idx ? swda.at(*idx).display_name : m}});
  }
  Json info;
  info["api_version"] = kApiVersion;
  info["models"] = {
      {"no_context", {{"id", nc.id()}, {"checksum", hex32(checksums_.no_context)}}},
      {"context", {{"id", cx.id()}, {"checksum", hex32(checksums_.context)}, {"context_size", cx.context_size()}}}};
  info["context_size"] = cx.context_size();
  info["tags"] = std::move(tags);
  info["vocabulary_size"] = nc.vocabulary().size();
  info["limits"] = {{"max_utterances", limits_.max_utterances},
                    {"max_utterance_chars", limits_.max_utterance_chars}};
  info["default_top_k"] = default_top_k_;
  info["version"] = analyzer_.metadata().version;
  info_body_ = info.dump();
}

std::shared_ptr<const ModelService> ModelService::load(const ServerConfig& config) {
  config.validate();
  if (config.no_context_model.empty() || config.context_model.empty()) {
    throw InvalidArgument("both --no-context-model and --context-model are required");
  }
  auto no_context = load_no_context_model(config.no_context_model);
  auto context = load_context_model(config.context_model);
  Checksums sums{file_crc32(config.no_context_model), file_crc32(config.context_model)};
  return std::make_shared<const ModelService>(std::move(no_context), std::move(context), sums, config.top_k,
                                              config.limits);
}

HttpResponse ModelService::analyze(std::string_view body) const {
  AnalysisRequest request;
  try {
    request = parse_analysis_request(body, limits_, default_top_k_);
  } catch (const RequestError& e) {
    return error_response(e.status(), e.code(), e.what());
  }
  try {
    const auto result = analyzer_.analyze(request);
    return json_response(200, to_json_string(result, analyzer_.tags()));
  } catch (const InvalidArgument& e) {
    return error_response(400, "invalid_request", e.what());
  } catch (const std::exception&) {
    return error_response(500, "internal_error", "analysis failed");
  }
}

HttpResponse ModelService::health() const { return json_response(200, R"({"status":"ok","models_loaded":2})"); }

HttpResponse ModelService::info() const { return json_response(200, info_body_); }

struct ModelServer::Impl {
  std::shared_ptr<const ModelService> service;
  httplib::Server http;
  int port = 0;
  std::thread thread;
};

ModelServer::ModelServer(std::shared_ptr<const ModelService> service, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()) {
  if (!service) throw InvalidArgument("model server needs a loaded service");
  impl_->service = std::move(service);
  auto& http = impl_->http;
  const ModelService* svc = impl_->service.get();

  http.set_payload_max_length(kMaxBodyBytes);
  http.Post("/analyze", [svc](const httplib::Request& req, httplib::Response& res) { send(res, svc->analyze(req.body)); });
  http.Get("/health", [svc](const httplib::Request&, httplib::Response& res) { send(res, svc->health()); });
  http.Get("/info", [svc](const httplib::Request&, httplib::Response& res) { send(res, svc->info()); });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    send(res, error_response(500, "internal_error", "internal server error"));
  });
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) send(res, error_response(404, "not_found", "no such endpoint"));
    else if (res.status == 413) send(res, error_response(413, "payload_too_large", "request body too large"));
    else if (res.status >= 400) send(res, error_response(res.status, "http_error", "request rejected"));
  });

  if (port == 0) {
    impl_->port = http.bind_to_any_port(host);
    if (impl_->port < 0) throw Error("cannot bind " + host);
  } else {
    if (!http.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    impl_->port = port;
  }
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

ModelServer::~ModelServer() {
  stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int ModelServer::port() const noexcept { return impl_->port; }

void ModelServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ModelServer::stop() { impl_->http.stop(); }

}  // namespace dwiz
