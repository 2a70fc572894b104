#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "layerflow/catalog.hpp"

namespace layerflow {

struct ChatMessage {
  std::string role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

/// A complete caller request: the message list plus the tool schemas exposed to
/// the caller for this turn.
struct Prompt {
  std::vector<ChatMessage> messages;
  Json tools = Json::array();

  /// Everything the caller reads, as one string (used for token accounting).
  std::string text() const {
    std::string out;
    for (const auto& m : messages) {
      if (!out.empty()) out += "\n\n";
      out += m.content;
    }
    if (!tools.empty()) out += "\n\n" + tools.dump();
    return out;
  }

  std::vector<std::string> tool_names() const {
    std::vector<std::string> names;
    for (const auto& t : tools) names.push_back(t.at("name").get<std::string>());
    return names;
  }
};

inline Json prompt_to_json(const Prompt& p) {
  Json messages = Json::array();
  for (const auto& m : p.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return Json{{"messages", messages}, {"tools", p.tools}};
}

inline Prompt prompt_from_json(const Json& j) {
  Prompt p;
  for (const auto& m : j.at("messages")) p.messages.push_back({m.at("role"), m.at("content")});
  p.tools = j.value("tools", Json::array());
  return p;
}

namespace templates {

inline constexpr std::string_view kExecutorSystem =
    "You are a tool caller.\n"
    "- Produce tool calls via the tool_calls field only.\n"
    "- Do NOT write explanations.\n"
    "- Follow the allowed tools for the current step strictly.";

inline constexpr std::string_view kExecutorUser = "User query: {input_description}";

inline constexpr std::string_view kLayerStep =
    "[Step {step_id}/{total_layers}]\n"
    "Allowed tools this step: {tool_names}\n"
    "\n"
    "Rules:\n"
    "- If a tool requires an ID (e.g., title_id, peopleid), you MUST first call a search tool to find the correct ID.\n"
    "- Do NOT hallucinate or make up IDs. Only use IDs returned from previous tool calls.\n"
    "- If no search tool is available in this step and you don't have a valid ID, skip that tool.\n"
    "\n"
    "You MUST respond in this exact format:\n"
    "Action: <tool_name>\n"
    "Action Input: <JSON arguments>";

inline constexpr std::string_view kFinishStep =
    "[FINAL STEP]\n"
    "All tool executions are complete.\n"
    "\n"
    "=== EXECUTION SUMMARY ===\n"
    "{executed_summary}\n"
    "=========================\n"
    "\n"
    "You MUST call the tool `Finish' exactly once.\n"
    "\n"
    "Rules:\n"
    "- Do NOT call any other tool.\n"
    "- Output exactly TWO lines in the following format.\n"
    "- Action must be exactly: Finish\n"
    "- Action Input must be a JSON object with keys: return_type, final_answer\n"
    "- final_answer MUST be grounded ONLY in EXECUTION SUMMARY; if missing, say the limitation.\n"
    "\n"
    "FORMAT (exactly two lines):\n"
    "Action: Finish\n"
    "Action Input: {\"return_type\":\"give_answer\",\"final_answer\":\"...\"}";

inline constexpr std::string_view kRepair =
    "[REPAIR MODE]\n"
    "You must fix the arguments for tool: {tool_name}\n"
    "\n"
    "Rules:\n"
    "- You MUST output exactly ONE tool call.\n"
    "- The tool name MUST be exactly: {tool_name}\n"
    "- The arguments MUST be a JSON object.\n"
    "- Only use keys defined in the schema.\n"
    "- Do NOT call Finish.\n"
    "- Do NOT output any plain text.\n"
    "\n"
    "=== TOOL SCHEMA ===\n"
    "{schema_summary}\n"
    "===================\n"
    "\n"
    "Previous arguments:\n"
    "{prev_args_json}\n"
    "\n"
    "Tool execution error:\n"
    "{tool_error_text}\n"
    "\n"
    "Now output ONLY in this JSON format:\n"
    "{\"tool_calls\":[{\"name\":\"{tool_name}\",\"arguments\":{...}}]}";

// Not part of the fixed templates: how prior observations and the summary are laid out.
inline constexpr std::string_view kObservationsHeader = "Previous tool results:";
inline constexpr std::string_view kEmptySummary = "(no tool results)";

}  // namespace templates

/// Replaces each `{name}` placeholder; the replacement text is never rescanned.
inline std::string substitute(std::string_view tmpl, std::span<const std::pair<std::string_view, std::string>> values) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : values) {
        if (tmpl.substr(i + 1, name.size()) == name && i + 1 + name.size() < tmpl.size() &&
            tmpl[i + 1 + name.size()] == '}') {
          out += value;
          i += name.size() + 2;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

inline constexpr std::size_t kObservationTruncation = 2048;

inline std::string truncate_body(std::string_view body, std::size_t limit = kObservationTruncation) {
  if (body.size() <= limit) return std::string(body);
  return std::string(body.substr(0, limit)) + "...";
}

/// A prior tool result as it is shown to the caller.
struct ObservationView {
  std::string tool_id;
  std::string body;
  bool error = false;
};

inline std::string observation_line(const ObservationView& o) {
  return o.tool_id + ": " + (o.error ? "[error] " : "") + truncate_body(o.body);
}

inline std::string render_executor_user(std::string_view query) {
  std::pair<std::string_view, std::string> values[] = {{"input_description", std::string(query)}};
  return substitute(templates::kExecutorUser, values);
}

inline std::string render_layer_step(int step_id, int total_layers, std::span<const std::string> tool_names) {
  std::string names;
  for (const auto& n : tool_names) {
    if (!names.empty()) names += ", ";
    names += n;
  }
  std::pair<std::string_view, std::string> values[] = {
      {"step_id", std::to_string(step_id)}, {"total_layers", std::to_string(total_layers)}, {"tool_names", names}};
  return substitute(templates::kLayerStep, values);
}

inline std::string render_finish_step(std::string_view executed_summary) {
  std::pair<std::string_view, std::string> values[] = {{"executed_summary", std::string(executed_summary)}};
  return substitute(templates::kFinishStep, values);
}

inline std::string render_repair(std::string_view tool_name, std::string_view schema_summary,
                                 std::string_view prev_args_json, std::string_view tool_error_text) {
  std::pair<std::string_view, std::string> values[] = {{"tool_name", std::string(tool_name)},
                                                       {"schema_summary", std::string(schema_summary)},
                                                       {"prev_args_json", std::string(prev_args_json)},
                                                       {"tool_error_text", std::string(tool_error_text)}};
  return substitute(templates::kRepair, values);
}

/// Compact JSON of required keys and per-key types/enums.
inline std::string schema_summary(const SchemaIndex& schema) {
  Json props = Json::object();
  for (const auto& [key, spec] : schema.properties) {
    Json p{{"type", std::string(to_string(spec.primitive_type))}};
    if (spec.enum_values) p["enum"] = *spec.enum_values;
    props[key] = p;
  }
  return Json{{"required", Json(schema.required)}, {"properties", props}}.dump();
}

inline std::string executed_summary(std::span<const ObservationView> observations) {
  if (observations.empty()) return std::string(templates::kEmptySummary);
  std::string out;
  for (const auto& o : observations) {
    if (!out.empty()) out += '\n';
    out += observation_line(o);
  }
  return out;
}

inline std::vector<ChatMessage> executor_preamble(std::string_view query) {
  return {{"system", std::string(templates::kExecutorSystem)}, {"user", render_executor_user(query)}};
}

/// Layer k's request: preamble, prior observations (when any), then the step
/// instructions. Only `tools_k` is exposed.
inline Prompt build_layer_prompt(int step_id, int total_steps, std::span<const ToolDoc> tools_k,
                                 std::string_view query, std::span<const ObservationView> prior) {
  Prompt p;
  p.messages = executor_preamble(query);
  if (!prior.empty()) {
    std::string block(templates::kObservationsHeader);
    for (const auto& o : prior) block += "\n" + observation_line(o);
    p.messages.push_back({"user", std::move(block)});
  }
  std::vector<std::string> names;
  for (const auto& t : tools_k) {
    names.push_back(t.name);
    p.tools.push_back(tool_schema_record(t));
  }
  p.messages.push_back({"user", render_layer_step(step_id, total_steps, names)});
  return p;
}

inline Prompt build_finish_prompt(std::string_view query, std::string_view summary) {
  Prompt p;
  p.messages = executor_preamble(query);
  p.messages.push_back({"user", render_finish_step(summary)});
  return p;
}

inline Prompt build_repair_prompt(const ToolDoc& tool, const SchemaIndex& schema, const Json& prev_args,
                                  std::string_view error_text) {
  Prompt p;
  p.messages = {{"system", std::string(templates::kExecutorSystem)},
                {"user", render_repair(tool.name, schema_summary(schema), prev_args.dump(), error_text)}};
  p.tools.push_back(tool_schema_record(tool));
  return p;
}

/// Whitespace-delimited token count.
inline std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

}  // namespace layerflow
