#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "dwiz/analysis.hpp"

namespace dwiz {

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8081;  // 0 picks a free port
  std::filesystem::path no_context_model;
  std::filesystem::path context_model;
  std::size_t top_k = kDefaultTopK;
  RequestLimits limits;

  /// Throws InvalidArgument on non-positive limits or an out-of-range top_k.
  void validate() const;
};

/// "host:port" with an optional host; "8080" binds 127.0.0.1.
std::pair<std::string, int> parse_bind_address(std::string_view bind);

/// Request handling for the model server, independent of any socket.
class ModelService {
 public:
  struct Checksums {
    std::uint32_t no_context = 0;
    std::uint32_t context = 0;
  };

  ModelService(std::shared_ptr<const NoContextModel> no_context, std::shared_ptr<const ContextModel> context,
               Checksums file_checksums, std::size_t default_top_k = kDefaultTopK, RequestLimits limits = {});

  /// Loads both model files; any failure throws.
  static std::shared_ptr<const ModelService> load(const ServerConfig& config);

  HttpResponse analyze(std::string_view body) const;
  HttpResponse health() const;
  HttpResponse info() const;

  const Analyzer& analyzer() const noexcept { return analyzer_; }

 private:
  Analyzer analyzer_;
  Checksums checksums_;
  std::size_t default_top_k_;
  RequestLimits limits_;
  std::string info_body_;
};

/// HTTP front end for a ModelService. Listens from construction until
/// stop() or destruction.
class ModelServer {
 public:
  ModelServer(std::shared_ptr<const ModelService> service, const std::string& host, int port);
  ~ModelServer();
  ModelServer(const ModelServer&) = delete;
  ModelServer& operator=(const ModelServer&) = delete;

  int port() const noexcept;
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dwiz
