#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace regjudge {

struct HttpHeader {
  std::string name;
  std::string value;
};

struct HttpResult {
  int status = 0;
  std::string body;
};

// POSTs a JSON body. Transport failures throw ProviderError (retryable) or
// TimeoutError; HTTP error statuses are returned to the caller untouched.
HttpResult http_post_json(const std::string& url, const std::string& body,
                          const std::vector<HttpHeader>& headers,
                          std::chrono::milliseconds timeout);

// Whether a status code is worth retrying (429 and 5xx).
bool retryable_status(int status);

// Replaces every occurrence of each non-empty secret with "***".
std::string redact(std::string text, const std::vector<std::string>& secrets);

}  // namespace regjudge
