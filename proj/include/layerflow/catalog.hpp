#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerflow/error.hpp"

namespace layerflow {

using Json = nlohmann::json;

enum class FieldType { String, Integer, Number, Boolean, Array, Object };

inline std::string_view to_string(FieldType type) {
  switch (type) {
    case FieldType::String: return "string";
    case FieldType::Integer: return "integer";
    case FieldType::Number: return "number";
    case FieldType::Boolean: return "boolean";
    case FieldType::Array: return "array";
    case FieldType::Object: return "object";
  }
  return "string";
}

inline std::optional<FieldType> parse_field_type(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "string") return FieldType::String;
  if (lower == "integer") return FieldType::Integer;
  if (lower == "number") return FieldType::Number;
  if (lower == "boolean") return FieldType::Boolean;
  if (lower == "array") return FieldType::Array;
  if (lower == "object") return FieldType::Object;
  return std::nullopt;
}

/// True when `value` is an acceptable runtime instance of `type`. Whole-valued
/// floats satisfy Integer; null satisfies nothing.
inline bool value_conforms(const Json& value, FieldType type) {
  switch (type) {
    case FieldType::String: return value.is_string();
    case FieldType::Integer:
      if (value.is_number_integer()) return true;
      if (value.is_number_float()) {
        double v = value.get<double>();
        return std::isfinite(v) && v == std::floor(v);
      }
      return false;
    case FieldType::Number:
      if (value.is_number_integer()) return true;
      return value.is_number_float() && std::isfinite(value.get<double>());
    case FieldType::Boolean: return value.is_boolean();
    case FieldType::Array: return value.is_array();
    case FieldType::Object: return value.is_object();
  }
  return false;
}

inline std::string_view json_kind(const Json& value) {
  if (value.is_null()) return "null";
  if (value.is_boolean()) return "boolean";
  if (value.is_number_integer()) return "integer";
  if (value.is_number()) return "number";
  if (value.is_string()) return "string";
  if (value.is_array()) return "array";
  return "object";
}

struct FieldSpec {
  FieldType primitive_type = FieldType::String;
  std::optional<std::vector<Json>> enum_values;

  bool operator==(const FieldSpec&) const = default;
};

/// Top-level view of a tool's parameter schema: required keys, property types, enums.
struct SchemaIndex {
  std::set<std::string> required;
  std::map<std::string, FieldSpec> properties;

  bool empty() const { return required.empty() && properties.empty(); }
  bool operator==(const SchemaIndex&) const = default;
};

struct ToolDoc {
  std::string tool_id;
  std::string name;
  std::string description;
  std::optional<Json> parameters;
  std::optional<std::string> output_type;
  // Unrecognized record keys, kept for round-tripping.
  Json extra = Json::object();
};

inline SchemaIndex build_schema_index(const ToolDoc& doc) {
  SchemaIndex index;
  if (!doc.parameters || doc.parameters->is_null()) return index;
  const Json& params = *doc.parameters;
  auto violation = [&](const std::string& what) {
    return Error(ErrorCode::SchemaViolation, doc.tool_id + ": " + what);
  };
  if (!params.is_object()) throw violation("parameters must be an object schema");
  if (auto it = params.find("type"); it != params.end()) {
    if (!it->is_string() || parse_field_type(it->get<std::string>()) != FieldType::Object)
      throw violation("top-level parameters type must be \"object\"");
  }
  if (auto it = params.find("properties"); it != params.end() && !it->is_null()) {
    if (!it->is_object()) throw violation("properties must be an object");
    for (const auto& [key, prop] : it->items()) {
      if (!prop.is_object()) throw violation("property '" + key + "' must be an object");
      auto type_it = prop.find("type");
      if (type_it == prop.end() || !type_it->is_string())
        throw violation("property '" + key + "' lacks a primitive type");
      auto type = parse_field_type(type_it->get<std::string>());
      if (!type)
        throw violation("property '" + key + "' has unsupported type " + type_it->dump());
      FieldSpec spec{*type, std::nullopt};
      if (auto enum_it = prop.find("enum"); enum_it != prop.end()) {
        if (!enum_it->is_array() || enum_it->empty())
          throw violation("enum of '" + key + "' must be a non-empty array");
        std::vector<Json> literals;
        for (const auto& literal : *enum_it) {
          if (!value_conforms(literal, *type))
            throw violation("enum literal " + literal.dump() + " of '" + key +
                            "' does not match type " + std::string(to_string(*type)));
          literals.push_back(literal);
        }
        spec.enum_values = std::move(literals);
      }
      index.properties.emplace(key, std::move(spec));
    }
  }
  if (auto it = params.find("required"); it != params.end() && !it->is_null()) {
    if (!it->is_array()) throw violation("required must be an array");
    for (const auto& key : *it) {
      if (!key.is_string()) throw violation("required entries must be strings");
      auto name = key.get<std::string>();
      if (!index.properties.contains(name))
        throw violation("required key '" + name + "' is not a declared property");
      index.required.insert(name);
    }
  }
  return index;
}

/// Sorted `key:type` listing. Required keys carry a trailing `*` on the key and
/// enums follow as `=[...]` in JSON.
inline std::string canonical_schema_text(const SchemaIndex& index) {
  std::string out;
  for (const auto& [key, spec] : index.properties) {
    if (!out.empty()) out += ' ';
    out += key;
    if (index.required.contains(key)) out += '*';
    out += ':';
    out += to_string(spec.primitive_type);
    if (spec.enum_values) out += '=' + Json(*spec.enum_values).dump();
  }
  return out;
}

inline std::string textualize(const ToolDoc& doc) {
  return doc.name + " " + doc.description + " " + canonical_schema_text(build_schema_index(doc));
}

class ToolCatalog {
 public:
  ToolCatalog() = default;

  explicit ToolCatalog(std::vector<ToolDoc> tools) : tools_(std::move(tools)) {
    schemas_.reserve(tools_.size());
    for (std::size_t i = 0; i < tools_.size(); ++i) {
      const auto& doc = tools_[i];
      if (doc.tool_id.empty()) throw Error(ErrorCode::MalformedCatalog, "tool with empty id");
      if (!index_.emplace(doc.tool_id, i).second)
        throw Error(ErrorCode::DuplicateToolId, doc.tool_id);
      schemas_.push_back(build_schema_index(doc));
    }
  }

  std::size_t size() const { return tools_.size(); }
  bool empty() const { return tools_.empty(); }
  std::span<const ToolDoc> tools() const { return tools_; }
  auto begin() const { return tools_.begin(); }
  auto end() const { return tools_.end(); }

  bool contains(const std::string& id) const { return index_.contains(id); }

  std::size_t position(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::UnknownTool, id);
    return it->second;
  }

  const ToolDoc& at(const std::string& id) const { return tools_[position(id)]; }
  const SchemaIndex& schema(const std::string& id) const { return schemas_[position(id)]; }

  /// Tools named in `ids`, in catalog order.
  ToolCatalog subset(std::span<const std::string> ids) const {
    std::vector<std::size_t> positions;
    for (const auto& id : ids) positions.push_back(position(id));
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    std::vector<ToolDoc> docs;
    for (auto p : positions) docs.push_back(tools_[p]);
    return ToolCatalog(std::move(docs));
  }

 private:
  std::vector<ToolDoc> tools_;
  std::vector<SchemaIndex> schemas_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline ToolDoc tool_doc_from_json(const Json& record) {
  if (!record.is_object()) throw Error(ErrorCode::MalformedCatalog, "tool record must be an object");
  ToolDoc doc;
  auto name = record.find("name");
  if (name == record.end() || !name->is_string() || name->get<std::string>().empty())
    throw Error(ErrorCode::MalformedCatalog, "tool record needs a non-empty string name");
  doc.name = name->get<std::string>();
  doc.tool_id = doc.name;
  if (auto it = record.find("description"); it != record.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(ErrorCode::MalformedCatalog, doc.name + ": description must be a string");
    doc.description = it->get<std::string>();
  }
  if (auto it = record.find("parameters"); it != record.end() && !it->is_null()) doc.parameters = *it;
  if (auto it = record.find("output_type"); it != record.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(ErrorCode::MalformedCatalog, doc.name + ": output_type must be a string");
    doc.output_type = it->get<std::string>();
  }
  for (const auto& [key, value] : record.items()) {
    if (key != "name" && key != "description" && key != "parameters" && key != "output_type")
      doc.extra[key] = value;
  }
  return doc;
}

inline Json tool_doc_to_json(const ToolDoc& doc) {
  Json record = doc.extra.is_object() ? doc.extra : Json::object();
  record["name"] = doc.name;
  record["description"] = doc.description;
  if (doc.parameters) record["parameters"] = *doc.parameters;
  if (doc.output_type) record["output_type"] = *doc.output_type;
  return record;
}

inline ToolCatalog parse_catalog(std::string_view raw) {
  Json parsed = Json::parse(raw.begin(), raw.end(), nullptr, false);
  if (parsed.is_discarded()) throw Error(ErrorCode::MalformedCatalog, "catalog is not valid JSON");
  if (!parsed.is_array()) throw Error(ErrorCode::MalformedCatalog, "catalog must be a JSON array");
  std::vector<ToolDoc> docs;
  docs.reserve(parsed.size());
  for (const auto& record : parsed) docs.push_back(tool_doc_from_json(record));
  return ToolCatalog(std::move(docs));
}

inline std::string serialize_catalog(const ToolCatalog& catalog, int indent = 2) {
  Json out = Json::array();
  for (const auto& doc : catalog) out.push_back(tool_doc_to_json(doc));
  return out.dump(indent);
}

/// Schema record handed to callers in the wire `tools` list.
inline Json tool_schema_record(const ToolDoc& doc) {
  Json record{{"name", doc.name}, {"description", doc.description}};
  record["parameters"] = doc.parameters ? *doc.parameters
                                        : Json{{"type", "object"}, {"properties", Json::object()}};
  return record;
}

}  // namespace layerflow
