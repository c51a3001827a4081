#include "regjudge/service.hpp"

#include <algorithm>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "regjudge/errors.hpp"
#include "regjudge/text.hpp"

namespace regjudge {

using nlohmann::json;

ApiResponse api_error(int status, std::string code, std::string message,
                      std::optional<std::string> stage) {
  ApiResponse r;
  r.status = status;
  r.body = {{"code", std::move(code)}, {"message", std::move(message)}};
  if (stage) r.body["stage"] = *stage;
  return r;
}

namespace {

ApiResponse from_error(const Error& e, std::optional<std::string> stage) {
  switch (e.code()) {
    case ErrorCode::InvalidInput:
    case ErrorCode::InvalidIdentifier:
      return api_error(400, "invalid_input", e.what(), stage);
    case ErrorCode::NotFound:
      return api_error(404, "not_found", e.what(), stage);
    case ErrorCode::ProviderError:
    case ErrorCode::MalformedOutput:
      return api_error(502, "provider_error", e.what(), stage);
    case ErrorCode::Timeout:
      return api_error(504, "timeout", e.what(), stage);
    case ErrorCode::IntegrityError:
      return api_error(500, "integrity_error", e.what(), stage);
    default:
      return api_error(500, "internal_error", e.what(), stage);
  }
}

// "/api/v1/x" and "/api/x" -> "/x"; anything else -> nullopt.
std::optional<std::string> api_route(const std::string& path) {
  for (const std::string prefix : {"/api/v1/", "/api/"}) {
    if (path.rfind(prefix, 0) == 0) return path.substr(prefix.size() - 1);
  }
  return std::nullopt;
}

}  // namespace

Api::Api(Engine& engine, ApiOptions options) : engine_(engine), options_(std::move(options)) {}

ApiResponse Api::handle(const ApiRequest& request) {
  ApiResponse response;
  try {
    if (request.method == "OPTIONS") {
      response.status = 204;
      response.body = nullptr;
    } else if (request.path == "/healthz") {
      response = request.method == "GET" ? health()
                                         : api_error(405, "invalid_input", "use GET");
    } else if (auto route = api_route(request.path)) {
      const auto key = request.headers.find("x-api-key");
      if (!options_.api_key.empty() &&
          (key == request.headers.end() || key->second != options_.api_key)) {
        response = api_error(401, "unauthorized", "missing or wrong X-API-Key");
      } else if (*route == "/judge") {
        response = request.method == "POST" ? judge(request.body)
                                            : api_error(405, "invalid_input", "use POST");
      } else if (route->rfind("/standards/", 0) == 0 && request.method == "GET") {
        std::optional<std::string> region;
        if (auto it = request.query.find("region"); it != request.query.end()) {
          region = it->second;
        }
        response = standard(route->substr(11), region);
      } else if (route->rfind("/compare/", 0) == 0 && request.method == "GET") {
        response = compare(route->substr(9));
      } else {
        response = api_error(404, "not_found", "no route for " + request.path);
      }
    } else {
      response = api_error(404, "not_found", "no route for " + request.path);
    }
  } catch (const Error& e) {
    response = from_error(e, std::nullopt);
  } catch (const std::exception& e) {
    spdlog::error("unhandled error on {} {}: {}", request.method, request.path, e.what());
    response = api_error(500, "internal_error", "internal error");
  }
  response.headers["Access-Control-Allow-Origin"] = options_.allowed_origin;
  response.headers["Access-Control-Allow-Headers"] = "Content-Type, X-API-Key";
  response.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
  response.headers["Access-Control-Expose-Headers"] = "X-Artifact-Id";
  return response;
}

ApiResponse Api::judge(const std::string& body) {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::parse_error&) {
    return api_error(400, "invalid_input", "request body is not valid JSON");
  }
  if (!request.is_object()) return api_error(400, "invalid_input", "request must be an object");
  for (const auto& [key, _] : request.items()) {
    if (key != "description" && key != "regions" && key != "k") {
      return api_error(400, "invalid_input", "unknown field '" + key + "'");
    }
  }
  if (!request.contains("description") || !request["description"].is_string() ||
      text::trim(request["description"].get<std::string>()).empty()) {
    return api_error(400, "invalid_input", "description must be a non-empty string");
  }
  JudgeOptions options;
  if (request.contains("regions")) {
    if (!request["regions"].is_array() || request["regions"].empty()) {
      return api_error(400, "invalid_input", "regions must be a non-empty array");
    }
    std::set<Region> regions;
    for (const auto& r : request["regions"]) {
      const auto region = r.is_string() ? parse_region(r.get<std::string>()) : std::nullopt;
      if (!region) return api_error(400, "invalid_input", "regions must be CN and/or US");
      regions.insert(*region);
    }
    options.regions = regions;
  }
  if (request.contains("k")) {
    if (!request["k"].is_number_integer() || request["k"].get<long long>() < 1) {
      return api_error(400, "invalid_input", "k must be a positive integer");
    }
    options.k = request["k"].get<std::size_t>();
  }
  try {
    const auto artifact = engine_.judge(request["description"].get<std::string>(), options);
    ApiResponse r;
    r.body = to_json(artifact);
    r.headers["X-Artifact-Id"] = artifact.id;
    return r;
  } catch (const StageError& e) {
    auto r = from_error(e, e.stage());
    if (r.status == 500) spdlog::error("judge failed in {}: {}", e.stage(), e.what());
    return r;
  }
}

ApiResponse Api::standard(const std::string& id, const std::optional<std::string>& region) {
  std::string norm;
  try {
    norm = normalize_standard_id(id);
  } catch (const Error&) {
    return api_error(400, "invalid_input", "standard id is empty");
  }
  const auto& corpus = engine_.corpus();
  if (region) {
    const auto r = parse_region(*region);
    if (!r) return api_error(400, "invalid_input", "region must be CN or US");
    const auto* record = corpus.find(norm, *r);
    if (!record) return api_error(404, "not_found", "no " + *region + " standard " + norm);
    return {200, to_json(*record), {}};
  }
  const auto matches = corpus.find_all(norm);
  if (matches.empty()) return api_error(404, "not_found", "no standard " + norm);
  if (matches.size() > 1) {
    auto r = api_error(409, "ambiguous", norm + " exists in several regions; pass ?region=");
    r.body["candidates"] = json::array();
    for (const auto* m : matches) {
      r.body["candidates"].push_back(
          {{"id", m->id}, {"norm_id", m->norm_id}, {"region", std::string(to_string(m->region))}});
    }
    return r;
  }
  return {200, to_json(*matches.front()), {}};
}

ApiResponse Api::compare(const std::string& artifact_id) {
  const auto artifact = engine_.store().load(artifact_id, true);
  ApiResponse r;
  r.body = to_json(artifact.matrix);
  r.headers["X-Artifact-Id"] = artifact.id;
  return r;
}

ApiResponse Api::health() {
  ApiResponse r;
  json body = {{"status", "ok"},
               {"api_version", "v1"},
               {"corpus_fingerprint", engine_.corpus_fingerprint()},
               {"records", engine_.corpus().size()},
               {"embedding_model", engine_.encoder().model_id()},
               {"chat_model", engine_.chat().model_id()},
               {"rules_version", engine_.rules().version()}};
  try {
    body["index_fingerprint"] = engine_.index_fingerprint();
    body["index_size"] = engine_.index().size();
  } catch (const Error&) {
    body["status"] = "degraded";
    body["index_fingerprint"] = nullptr;
    body["index_size"] = 0;
  }
  r.body = body;
  return r;
}

// ---------------------------------------------------------------------------
// httplib adapter

struct HttpServer::Impl {
  Api& api;
  httplib::Server server;
  std::atomic<bool> bound{false};

  explicit Impl(Api& a) : api(a) {}

  void dispatch(const httplib::Request& req, httplib::Response& res) {
    ApiRequest request;
    request.method = req.method;
    request.path = req.path;
    request.body = req.body;
    for (const auto& [k, v] : req.params) request.query.emplace(k, v);
    for (const auto& [k, v] : req.headers) request.headers.emplace(text::to_lower_ascii(k), v);
    const auto response = api.handle(request);
    res.status = response.status;
    for (const auto& [k, v] : response.headers) res.set_header(k, v);
    if (response.status != 204) res.set_content(response.body.dump(), "application/json");
  }
};

HttpServer::HttpServer(Api& api) : impl_(std::make_unique<Impl>(api)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    impl_->dispatch(req, res);
  };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Options(".*", handler);
  impl_->server.set_payload_max_length(1 << 20);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound_port = port;
  if (port == 0) {
    bound_port = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound_port = -1;
  }
  if (bound_port < 0) {
    throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return bound_port;
}

void HttpServer::listen() {
  if (!impl_->bound) throw Error(ErrorCode::IoError, "bind() must be called before listen()");
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace regjudge
