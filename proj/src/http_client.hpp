#pragma once

#include <functional>
#include <string>

#include <nlohmann/json.hpp>

namespace ragcfg::detail {

struct HttpRequest {
  std::string url;  // scheme://host[:port]/path
  std::string api_key;
  nlohmann::json body;
  int max_attempts = 3;
  int backoff_ms = 200;
  int timeout_s = 60;
};

// POSTs JSON with retry and exponential backoff. `on_attempt` runs before
// every attempt (budget accounting may throw from it). Throws TransportError
// once attempts are exhausted; non-2xx responses and unparseable bodies count
// as failed attempts.
nlohmann::json post_json(const HttpRequest& request, const std::string& stage,
                         const std::function<void()>& on_attempt = {});

}  // namespace ragcfg::detail
