#include "regjudge/http_client.hpp"

#include <httplib.h>

#include "regjudge/errors.hpp"

namespace regjudge {

namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "endpoint URL needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpResult http_post_json(const std::string& url, const std::string& body,
                          const std::vector<HttpHeader>& headers,
                          std::chrono::milliseconds timeout) {
  const auto parts = split_url(url);
  httplib::Client client(parts.origin);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers hs;
  for (const auto& h : headers) hs.emplace(h.name, h.value);

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(parts.path, hs, body, "application/json");
  if (!res) {
    const auto err = res.error();
    const std::string what = "POST " + parts.origin + parts.path + " failed: " +
                             httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout) throw TimeoutError(what);
    // httplib reports an expired read deadline as a plain read error.
    if (err == httplib::Error::Read && std::chrono::steady_clock::now() - start >= timeout) {
      throw TimeoutError(what + " (timed out)");
    }
    throw ProviderError(what, /*retryable=*/true);
  }
  return {res->status, res->body};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

std::string redact(std::string text, const std::vector<std::string>& secrets) {
  for (const auto& secret : secrets) {
    if (secret.empty()) continue;
    for (auto pos = text.find(secret); pos != std::string::npos;
         pos = text.find(secret, pos + 3)) {
      text.replace(pos, secret.size(), "***");
    }
  }
  return text;
}

}  // namespace regjudge
