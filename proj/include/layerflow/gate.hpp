#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "layerflow/catalog.hpp"

namespace layerflow {

struct ToolCall {
  std::string tool_id;
  Json arguments = Json::object();

  bool operator==(const ToolCall&) const = default;
};

struct TypeError {
  std::string key;
  FieldType expected;
  std::string found;
  bool operator==(const TypeError&) const = default;
};

struct EnumViolation {
  std::string key;
  Json value;
  std::vector<Json> allowed;
  bool operator==(const EnumViolation&) const = default;
};

/// Structured report of what is wrong with a call. `runtime_error` carries the
/// backend's error text when the call failed after passing the gate.
struct Diagnosis {
  std::vector<std::string> missing;
  std::vector<TypeError> type_errors;
  std::vector<EnumViolation> enum_violations;
  std::vector<std::string> dropped_keys;
  std::string runtime_error;

  bool blocking() const { return !missing.empty() || !type_errors.empty() || !enum_violations.empty(); }
  bool empty() const { return !blocking() && dropped_keys.empty() && runtime_error.empty(); }
  bool operator==(const Diagnosis&) const = default;
};

enum class Verdict { Accept, Reject };

struct GateResult {
  Verdict verdict = Verdict::Reject;
  Json sanitized_args;  // object when accepted, null otherwise
  Diagnosis diagnosis;

  bool accepted() const { return verdict == Verdict::Accept; }
};

/// Drop unknown keys, then check required keys, primitive types and enums, in that order.
inline GateResult gate(const ToolCall& call, const SchemaIndex& schema) {
  GateResult result;
  Json remainder = Json::object();
  if (call.arguments.is_object()) {
    for (const auto& [key, value] : call.arguments.items()) {
      if (schema.properties.contains(key))
        remainder[key] = value;
      else
        result.diagnosis.dropped_keys.push_back(key);
    }
  }
  for (const auto& key : schema.required)
    if (!remainder.contains(key)) result.diagnosis.missing.push_back(key);
  for (const auto& [key, value] : remainder.items()) {
    const auto& spec = schema.properties.at(key);
    if (!value_conforms(value, spec.primitive_type)) {
      result.diagnosis.type_errors.push_back({key, spec.primitive_type, std::string(json_kind(value))});
      continue;
    }
    if (spec.enum_values &&
        std::find(spec.enum_values->begin(), spec.enum_values->end(), value) == spec.enum_values->end())
      result.diagnosis.enum_violations.push_back({key, value, *spec.enum_values});
  }
  if (!result.diagnosis.blocking()) {
    result.verdict = Verdict::Accept;
    result.sanitized_args = std::move(remainder);
  }
  return result;
}

inline Json diagnosis_to_json(const Diagnosis& d) {
  Json j = Json::object();
  j["missing"] = d.missing;
  j["type_errors"] = Json::array();
  for (const auto& e : d.type_errors)
    j["type_errors"].push_back({{"key", e.key}, {"expected", std::string(to_string(e.expected))}, {"found", e.found}});
  j["enum_violations"] = Json::array();
  for (const auto& e : d.enum_violations)
    j["enum_violations"].push_back({{"key", e.key}, {"value", e.value}, {"allowed", e.allowed}});
  j["dropped_keys"] = d.dropped_keys;
  if (!d.runtime_error.empty()) j["runtime_error"] = d.runtime_error;
  return j;
}

/// One-line human-readable summary, used as error text in prompts and observations.
inline std::string diagnosis_summary(const Diagnosis& d) {
  std::string out;
  auto add = [&](const std::string& part) {
    if (!out.empty()) out += "; ";
    out += part;
  };
  for (const auto& k : d.missing) add("missing required field '" + k + "'");
  for (const auto& e : d.type_errors)
    add("field '" + e.key + "' expects " + std::string(to_string(e.expected)) + " but got " + e.found);
  for (const auto& e : d.enum_violations)
    add("field '" + e.key + "' value " + e.value.dump() + " not in " + Json(e.allowed).dump());
  for (const auto& k : d.dropped_keys) add("unknown field '" + k + "' dropped");
  if (!d.runtime_error.empty()) add(d.runtime_error);
  return out;
}

}  // namespace layerflow
