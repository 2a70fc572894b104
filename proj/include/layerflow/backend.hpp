#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "layerflow/caller.hpp"
#include "layerflow/gate.hpp"
#include "layerflow/rng.hpp"

namespace layerflow {

/// Where a call sits in a trajectory; simulated backends key their randomness on it.
struct InvocationContext {
  std::string task_id;
  int layer = 0;
  int ordinal = 0;
  int attempt = 0;
};

struct BackendResponse {
  bool error_status = false;
  std::string body;
  bool operator==(const BackendResponse&) const = default;
};

class ToolBackend {
 public:
  virtual ~ToolBackend() = default;
  virtual BackendResponse invoke(const ToolCall& call, const InvocationContext& ctx) = 0;
};

/// Error text of a `{"error": ...}` envelope, or empty when the body is not one.
/// An empty string or null value means "no error".
inline std::string envelope_error(std::string_view body) {
  auto j = Json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("error")) return {};
  const Json& e = j["error"];
  if (e.is_null() || (e.is_string() && e.get<std::string>().empty()) || (e.is_boolean() && !e.get<bool>()))
    return {};
  return std::string(body);
}

/// Empty body, whitespace, `[]`, `{}`, `""` or `null`.
inline bool is_uninformative(std::string_view body) {
  auto b = body.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return true;
  auto e = body.find_last_not_of(" \t\r\n");
  auto t = body.substr(b, e - b + 1);
  return t == "[]" || t == "{}" || t == "\"\"" || t == "null";
}

/// Runtime error text for a response, or empty when the call succeeded.
inline std::string runtime_failure(const BackendResponse& r, bool repair_empty) {
  if (r.error_status) return r.body.empty() ? "backend reported an error" : r.body;
  if (auto e = envelope_error(r.body); !e.empty()) return e;
  if (repair_empty && is_uninformative(r.body)) return "tool returned an empty or uninformative response";
  return {};
}

/// Calls real tool endpoints: POST of the argument object to the tool's URL.
class RemoteBackend : public ToolBackend {
 public:
  RemoteBackend(std::map<std::string, std::string> endpoints, HttpTransport transport)
      : endpoints_(std::move(endpoints)), transport_(std::move(transport)) {}

  BackendResponse invoke(const ToolCall& call, const InvocationContext&) override {
    auto it = endpoints_.find(call.tool_id);
    if (it == endpoints_.end()) throw Error(ErrorCode::BackendUnavailable, "no endpoint for " + call.tool_id);
    ++requests_;
    auto res = transport_(it->second, call.arguments.dump());
    if (!res) throw Error(ErrorCode::BackendUnavailable, "no response from " + it->second);
    return {res->status < 200 || res->status >= 300, res->body};
  }

  std::size_t requests() const { return requests_.load(); }

  static std::map<std::string, std::string> load_endpoints(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    return Json::parse(in).get<std::map<std::string, std::string>>();
  }

 private:
  std::map<std::string, std::string> endpoints_;
  HttpTransport transport_;
  std::atomic<std::size_t> requests_{0};
};

/// Hex digest naming the cache entry of a call.
inline std::string cache_key(const ToolCall& call) {
  std::uint64_t h = mix_key({hash_string(call.tool_id), hash_string(call.arguments.dump())});
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Record/replay wrapper: `<dir>/<tool_id>/<key>.json` holds each response.
/// Misses go to `inner`; without one, a miss is BackendUnavailable.
class CachedBackend : public ToolBackend {
 public:
  CachedBackend(std::filesystem::path dir, std::shared_ptr<ToolBackend> inner = nullptr)
      : dir_(std::move(dir)), inner_(std::move(inner)) {}

  std::filesystem::path entry_path(const ToolCall& call) const { return dir_ / call.tool_id / (cache_key(call) + ".json"); }

  BackendResponse invoke(const ToolCall& call, const InvocationContext& ctx) override {
    auto path = entry_path(call);
    if (std::ifstream in(path); in) {
      auto j = Json::parse(in, nullptr, false);
      if (!j.is_discarded() && j.is_object()) {
        ++hits_;
        return {j.value("error_status", false), j.value("body", "")};
      }
    }
    if (!inner_) throw Error(ErrorCode::BackendUnavailable, "cache miss for " + call.tool_id);
    auto r = inner_->invoke(call, ctx);
    store(path, call, r);
    return r;
  }

  std::size_t hits() const { return hits_.load(); }

 private:
  void store(const std::filesystem::path& path, const ToolCall& call, const BackendResponse& r) {
    std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp" + std::to_string(hash_string(std::to_string(counter_++)));
    {
      std::ofstream out(tmp, std::ios::binary);
      out << Json{{"tool", call.tool_id}, {"arguments", call.arguments}, {"error_status", r.error_status},
                  {"body", r.body}}
                 .dump();
    }
    std::filesystem::rename(tmp, path);
  }

  std::filesystem::path dir_;
  std::shared_ptr<ToolBackend> inner_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::uint64_t> counter_{0};
};

}  // namespace layerflow
