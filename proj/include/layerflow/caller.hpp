#pragma once

#include <functional>
#include <optional>
#include <string>

#include "layerflow/prompts.hpp"

namespace layerflow {

/// One caller turn. `kind` is "layer", "finish", "flat" or "repair/<tool_id>".
struct CallerRequest {
  std::string task_id;
  std::string kind;
  Prompt prompt;
  double temperature = 0.0;
};

/// Assistant output. Token usage is filled in only when the backend reports it.
struct CallerReply {
  std::string text;
  std::optional<std::size_t> prompt_tokens;
  std::optional<std::size_t> completion_tokens;
};

/// The language model behind tool calling. Implementations must tolerate
/// concurrent calls from different trajectories.
class Caller {
 public:
  virtual ~Caller() = default;
  virtual CallerReply respond(const CallerRequest& request) = 0;
};

struct HttpResult {
  int status = 0;
  std::string body;
};

/// POSTs a JSON body; returns nullopt when the endpoint cannot be reached.
using HttpTransport = std::function<std::optional<HttpResult>(const std::string& url, const std::string& body)>;

/// Chat endpoint client. Accepts OpenAI-style `choices[0].message` replies as
/// well as a bare `{content, tool_calls}` object; structured tool calls are
/// re-encoded as a `{"tool_calls":[...]}` envelope for the parser.
class RemoteCaller : public Caller {
 public:
  RemoteCaller(std::string url, HttpTransport transport)
      : url_(std::move(url)), transport_(std::move(transport)) {}

  CallerReply respond(const CallerRequest& request) override {
    Json body = prompt_to_json(request.prompt);
    body["temperature"] = request.temperature;
    auto res = transport_(url_, body.dump());
    if (!res) throw Error(ErrorCode::CallerUnavailable, "no response from " + url_);
    if (res->status < 200 || res->status >= 300)
      throw Error(ErrorCode::CallerUnavailable, "caller returned HTTP " + std::to_string(res->status));
    auto j = Json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::CallerUnavailable, "caller reply is not JSON");
    return decode_reply(j);
  }

  static CallerReply decode_reply(const Json& j) {
    const Json* msg = &j;
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
      const Json& choice = j["choices"][0];
      msg = choice.contains("message") ? &choice["message"] : &choice;
    }
    CallerReply reply;
    if (msg->contains("tool_calls") && (*msg)["tool_calls"].is_array() && !(*msg)["tool_calls"].empty()) {
      Json calls = Json::array();
      for (const auto& c : (*msg)["tool_calls"]) {
        const Json& fn = c.contains("function") ? c["function"] : c;
        calls.push_back({{"name", fn.value("name", "")}, {"arguments", fn.value("arguments", Json::object())}});
      }
      reply.text = Json{{"tool_calls", calls}}.dump();
    } else if (msg->contains("content") && (*msg)["content"].is_string()) {
      reply.text = (*msg)["content"].get<std::string>();
    } else {
      throw Error(ErrorCode::CallerUnavailable, "caller reply has neither content nor tool_calls");
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      const Json& u = j["usage"];
      if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_unsigned())
        reply.prompt_tokens = u["prompt_tokens"].get<std::size_t>();
      if (u.contains("completion_tokens") && u["completion_tokens"].is_number_unsigned())
        reply.completion_tokens = u["completion_tokens"].get<std::size_t>();
    }
    return reply;
  }

 private:
  std::string url_;
  HttpTransport transport_;
};

}  // namespace layerflow
