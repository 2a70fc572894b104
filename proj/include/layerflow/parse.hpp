#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "layerflow/gate.hpp"

namespace layerflow {

enum class ParseMode { Layer, Finish, Repair };

struct FinishRecord {
  std::string return_type;
  std::string final_answer;
  bool operator==(const FinishRecord&) const = default;
};

struct RejectedCall {
  std::string tool_name;
  ErrorCode reason;
  std::string detail;
};

struct ParsedOutput {
  std::vector<ToolCall> calls;
  std::vector<RejectedCall> rejected;
  std::optional<FinishRecord> finish;
  // Set when parsing stopped at a fabricated turn or text glued after a call.
  bool collapsed = false;
  std::string discarded;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool starts_with_turn_marker(std::string_view s) {
  s = trim(s);
  for (std::string_view m : {"Human:", "Assistant:", "Observation:", "User:", "System:"})
    if (s.starts_with(m)) return true;
  return false;
}

/// Length of the balanced JSON object starting at text[0] == '{', or npos.
inline std::size_t balanced_object_length(std::string_view text) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

/// Arguments may arrive as an object or as a JSON string encoding one.
inline std::optional<Json> arguments_object(const Json& value) {
  if (value.is_object()) return std::optional<Json>(value);
  if (value.is_string()) {
    auto inner = Json::parse(value.get<std::string>(), nullptr, false);
    if (!inner.is_discarded() && inner.is_object()) return std::optional<Json>(std::move(inner));
  }
  return std::nullopt;
}

inline std::string_view strip_code_fence(std::string_view s) {
  s = trim(s);
  if (s.starts_with("```")) {
    auto nl = s.find('\n');
    s = nl == std::string_view::npos ? std::string_view{} : s.substr(nl + 1);
    if (auto end = s.rfind("```"); end != std::string_view::npos) s = s.substr(0, end);
    s = trim(s);
  }
  return s;
}

/// `{"tool_calls":[{"name":..,"arguments":..}]}`, or nullopt when `text` is not that envelope.
inline std::optional<std::vector<std::pair<std::string, Json>>> parse_envelope(std::string_view text) {
  text = strip_code_fence(text);
  if (!text.starts_with('{')) return std::nullopt;
  auto j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("tool_calls") || !j["tool_calls"].is_array())
    return std::nullopt;
  std::vector<std::pair<std::string, Json>> out;
  for (const auto& c : j["tool_calls"]) {
    const Json& fn = c.contains("function") ? c["function"] : c;
    std::string name = fn.contains("name") && fn["name"].is_string() ? fn["name"].get<std::string>() : "";
    out.emplace_back(name, fn.contains("arguments") ? fn["arguments"] : Json());
  }
  return out;
}

struct ActionPair {
  std::string name;
  std::optional<Json> arguments;  // nullopt when the argument text is not an object
};

struct ScanResult {
  std::vector<ActionPair> pairs;
  bool collapsed = false;
  bool malformed = false;
  std::string discarded;
};

/// Reads consecutive Action / Action Input pairs. Stops at a fabricated turn
/// marker, at text glued after an argument object, or at a malformed pair.
inline ScanResult scan_actions(std::string_view raw) {
  ScanResult out;
  std::size_t pos = 0;
  auto next_line = [&](std::size_t from) {
    auto nl = raw.find('\n', from);
    return nl == std::string_view::npos ? raw.size() : nl;
  };
  while (pos < raw.size()) {
    std::size_t eol = next_line(pos);
    std::string_view line = trim(raw.substr(pos, eol - pos));
    if (starts_with_turn_marker(line)) {
      out.collapsed = true;
      out.discarded = std::string(raw.substr(pos));
      return out;
    }
    if (!line.starts_with("Action:")) {
      pos = eol + 1;
      continue;
    }
    ActionPair pair;
    pair.name = std::string(trim(line.substr(7)));
    // Find the Action Input line.
    std::size_t ipos = eol + 1;
    while (ipos < raw.size() && trim(raw.substr(ipos, next_line(ipos) - ipos)).empty()) ipos = next_line(ipos) + 1;
    if (ipos >= raw.size()) {
      out.malformed = true;
      return out;
    }
    std::size_t ieol = next_line(ipos);
    std::string_view input_line = trim(raw.substr(ipos, ieol - ipos));
    if (!input_line.starts_with("Action Input:")) {
      out.malformed = true;
      out.discarded = std::string(raw.substr(pos));
      return out;
    }
    std::size_t brace = raw.find_first_not_of(" \t", raw.find("Action Input:", ipos) + 13);
    if (brace == std::string_view::npos || raw[brace] != '{') {
      out.pairs.push_back(std::move(pair));
      out.malformed = true;
      out.discarded = std::string(raw.substr(pos));
      return out;
    }
    std::size_t len = balanced_object_length(raw.substr(brace));
    if (len == std::string_view::npos) {
      out.pairs.push_back(std::move(pair));
      out.malformed = true;
      out.discarded = std::string(raw.substr(pos));
      return out;
    }
    auto args = Json::parse(raw.substr(brace, len), nullptr, false);
    if (!args.is_discarded() && args.is_object()) pair.arguments = std::move(args);
    bool malformed = !pair.arguments.has_value();
    out.pairs.push_back(std::move(pair));
    if (malformed) {
      out.malformed = true;
      return out;
    }
    std::size_t after = brace + len;
    std::size_t after_eol = next_line(after);
    if (!trim(raw.substr(after, after_eol - after)).empty()) {
      out.collapsed = true;
      out.discarded = std::string(raw.substr(after));
      return out;
    }
    pos = after_eol + 1;
  }
  return out;
}

}  // namespace detail

/// Extracts tool calls (layer mode), the Finish record (finish mode) or the single
/// repaired call (repair mode) from a caller response.
inline ParsedOutput parse_caller_output(std::string_view raw, std::span<const std::string> allowed_tools,
                                        ParseMode mode) {
  ParsedOutput out;
  auto allowed = [&](const std::string& name) {
    return std::find(allowed_tools.begin(), allowed_tools.end(), name) != allowed_tools.end();
  };

  if (mode == ParseMode::Repair) {
    auto envelope = detail::parse_envelope(raw);
    if (!envelope) throw Error(ErrorCode::ParseFailure, "repair response is not a tool_calls envelope");
    if (envelope->size() != 1)
      throw Error(ErrorCode::WrongTool, "repair response must hold exactly one call, got " +
                                            std::to_string(envelope->size()));
    auto& [name, args] = envelope->front();
    if (allowed_tools.empty() || name != allowed_tools.front())
      throw Error(ErrorCode::WrongTool, "repair response names '" + name + "'");
    auto obj = detail::arguments_object(args);
    if (!obj) throw Error(ErrorCode::MalformedArguments, "repair arguments are not an object");
    out.calls.push_back({name, std::move(*obj)});
    return out;
  }

  std::vector<detail::ActionPair> pairs;
  if (auto envelope = detail::parse_envelope(raw)) {
    for (auto& [name, args] : *envelope) pairs.push_back({name, detail::arguments_object(args)});
  } else {
    auto scan = detail::scan_actions(raw);
    out.collapsed = scan.collapsed;
    out.discarded = std::move(scan.discarded);
    pairs = std::move(scan.pairs);
  }
  if (pairs.empty()) throw Error(ErrorCode::NoActionFound, "no Action / Action Input pair found");

  if (mode == ParseMode::Finish) {
    const auto& first = pairs.front();
    if (first.name != "Finish") throw Error(ErrorCode::UnknownTool, "finish step called '" + first.name + "'");
    if (!first.arguments) throw Error(ErrorCode::MalformedArguments, "Finish arguments are not an object");
    const Json& a = *first.arguments;
    if (!a.contains("return_type") || !a["return_type"].is_string() || !a.contains("final_answer") ||
        !a["final_answer"].is_string())
      throw Error(ErrorCode::MalformedArguments, "Finish needs string return_type and final_answer");
    out.finish = FinishRecord{a["return_type"].get<std::string>(), a["final_answer"].get<std::string>()};
    return out;
  }

  for (auto& pair : pairs) {
    if (!pair.arguments) {
      if (out.calls.empty() && out.rejected.empty())
        throw Error(ErrorCode::MalformedArguments, "arguments for '" + pair.name + "' are not a JSON object");
      out.rejected.push_back({pair.name, ErrorCode::MalformedArguments, "arguments are not a JSON object"});
      continue;
    }
    if (!allowed(pair.name)) {
      out.rejected.push_back({pair.name, ErrorCode::UnknownTool, "tool is not allowed in this step"});
      continue;
    }
    out.calls.push_back({pair.name, std::move(*pair.arguments)});
  }
  return out;
}

}  // namespace layerflow
