#pragma once

// Eigen must be seen before httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include <Eigen/Core>
#include <httplib.h>

#include "layerflow/caller.hpp"

namespace layerflow {

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  auto scheme = url.find("://");
  auto start = scheme == std::string::npos ? 0 : scheme + 3;
  auto slash = url.find('/', start);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace detail

/// Plain-HTTP transport over cpp-httplib with fixed timeouts.
inline HttpTransport http_transport(int timeout_seconds = 60) {
  return [timeout_seconds](const std::string& url, const std::string& body) -> std::optional<HttpResult> {
    auto [origin, path] = detail::split_url(url);
    httplib::Client client(origin);
    client.set_connection_timeout(timeout_seconds, 0);
    client.set_read_timeout(timeout_seconds, 0);
    auto res = client.Post(path, body, "application/json");
    if (!res) return std::nullopt;
    return HttpResult{res->status, res->body};
  };
}

}  // namespace layerflow
