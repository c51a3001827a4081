#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "regjudge/pipeline.hpp"

namespace regjudge {

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lowercase names
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
  std::map<std::string, std::string> headers;
};

// Closed set of error codes returned in ApiError bodies.
inline constexpr const char* kApiErrorCodes[] = {
    "invalid_input",  "unauthorized", "not_found", "ambiguous",
    "provider_error", "timeout",      "integrity_error", "internal_error"};

ApiResponse api_error(int status, std::string code, std::string message,
                      std::optional<std::string> stage = std::nullopt);

struct ApiOptions {
  // Required in X-API-Key on /api routes when non-empty.
  std::string api_key;
  std::string allowed_origin = "*";
};

// Request routing and JSON handling, independent of any socket library.
// Routes live under /api/v1 with unversioned /api aliases; /healthz is open.
class Api {
 public:
  Api(Engine& engine, ApiOptions options = {});

  ApiResponse handle(const ApiRequest& request);

  ApiResponse judge(const std::string& body);
  ApiResponse standard(const std::string& id, const std::optional<std::string>& region);
  ApiResponse compare(const std::string& artifact_id);
  ApiResponse health();

 private:
  Engine& engine_;
  ApiOptions options_;
};

// Blocking HTTP server around an Api.
class HttpServer {
 public:
  explicit HttpServer(Api& api);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void listen();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace regjudge
