#include "http_client.hpp"

#include <chrono>
#include <thread>

#ifdef RAGCFG_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include "ragcfg/error.hpp"

namespace ragcfg::detail {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

SplitUrl split_url(const std::string& url, const std::string& stage) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::kValidation, stage, "URL without scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

nlohmann::json post_json(const HttpRequest& request, const std::string& stage,
                         const std::function<void()>& on_attempt) {
  const SplitUrl target = split_url(request.url, stage);
  httplib::Client client(target.origin);
  client.set_connection_timeout(request.timeout_s, 0);
  client.set_read_timeout(request.timeout_s, 0);
  httplib::Headers headers;
  if (!request.api_key.empty()) headers.emplace("Authorization", "Bearer " + request.api_key);
  const std::string payload = request.body.dump();

  std::string last_error = "no attempt made";
  int delay_ms = request.backoff_ms;
  const int attempts = std::max(1, request.max_attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (on_attempt) on_attempt();
    auto res = client.Post(target.path, headers, payload, "application/json");
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
    } else if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::parse_error& e) {
        last_error = std::string("unparseable response: ") + e.what();
      }
    }
    if (attempt < attempts && delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
  }
  throw TransportError(stage, last_error + " after " + std::to_string(attempts) + " attempts",
                       attempts);
}

}  // namespace ragcfg::detail
