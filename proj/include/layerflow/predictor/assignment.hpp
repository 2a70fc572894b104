#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <vector>

#include "layerflow/catalog.hpp"

namespace layerflow {

enum class LayerSource { Predicted, Shifted };

inline std::string_view to_string(LayerSource s) { return s == LayerSource::Predicted ? "predicted" : "shifted"; }

struct ToolLayer {
  std::string tool_id;
  int layer = 0;
  LayerSource source = LayerSource::Predicted;
};

/// Per-task map from tool to execution layer in [0, num_layers - 1].
struct LayerAssignment {
  int num_layers = 5;
  std::vector<ToolLayer> tools;
  std::vector<std::string> warnings;

  int layer_of(const std::string& id) const {
    for (const auto& t : tools)
      if (t.tool_id == id) return t.layer;
    throw Error(ErrorCode::UnknownTool, id + " has no layer");
  }

  bool covers(const std::string& id) const {
    return std::any_of(tools.begin(), tools.end(), [&](const ToolLayer& t) { return t.tool_id == id; });
  }

  std::vector<std::string> tools_in_layer(int k) const {
    std::vector<std::string> out;
    for (const auto& t : tools)
      if (t.layer == k) out.push_back(t.tool_id);
    return out;
  }

  int non_empty_layers() const {
    std::set<int> used;
    for (const auto& t : tools) used.insert(t.layer);
    return static_cast<int>(used.size());
  }
};

inline Json assignment_to_json(const LayerAssignment& a) {
  Json tools = Json::array();
  for (const auto& t : a.tools)
    tools.push_back({{"tool", t.tool_id}, {"layer", t.layer}, {"source", std::string(to_string(t.source))}});
  return Json{{"num_layers", a.num_layers}, {"tools", tools}, {"warnings", a.warnings}};
}

inline LayerAssignment assignment_from_json(const Json& j) {
  LayerAssignment a;
  a.num_layers = j.at("num_layers").get<int>();
  for (const auto& t : j.at("tools")) {
    ToolLayer tl{t.at("tool").get<std::string>(), t.at("layer").get<int>(), LayerSource::Predicted};
    if (t.value("source", "predicted") == "shifted") tl.source = LayerSource::Shifted;
    if (tl.layer < 0 || tl.layer >= a.num_layers)
      throw Error(ErrorCode::InvalidArgument, "layer out of range for " + tl.tool_id);
    a.tools.push_back(std::move(tl));
  }
  if (j.contains("warnings")) a.warnings = j.at("warnings").get<std::vector<std::string>>();
  return a;
}

/// Assignment from explicit gold layers (used by the simulation suites).
inline LayerAssignment make_assignment(std::span<const std::string> ids, std::span<const int> layers, int num_layers) {
  if (ids.size() != layers.size()) throw Error(ErrorCode::InvalidArgument, "ids and layers differ in length");
  LayerAssignment a;
  a.num_layers = num_layers;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (layers[i] < 0 || layers[i] >= num_layers)
      throw Error(ErrorCode::InvalidArgument, "layer out of range for " + ids[i]);
    a.tools.push_back({ids[i], layers[i], LayerSource::Predicted});
  }
  return a;
}

namespace detail {

inline std::set<std::string> word_set(std::string_view text) {
  std::set<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      cur.push_back(c);
    } else if (!cur.empty()) {
      words.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.insert(cur);
  return words;
}

/// True when `producer` yields a value that `consumer` requires. A declared
/// output_type is authoritative; otherwise a required key named verbatim in the
/// producer's name or description counts, unless the producer requires it too.
inline bool feeds(const ToolDoc& producer, const SchemaIndex& producer_schema, const SchemaIndex& consumer_schema) {
  if (producer.output_type) return consumer_schema.required.contains(*producer.output_type);
  auto words = word_set(producer.name + " " + producer.description);
  for (const auto& key : consumer_schema.required)
    if (!producer_schema.required.contains(key) && words.contains(key)) return true;
  return false;
}

}  // namespace detail

struct ShiftStats {
  int passes = 0;
};

/// Raises consumers above their producers until every dependency edge points to a
/// strictly later layer, or both ends sit at the last layer (logged as a warning). Edges that
/// would close a cycle are ignored; among a cycle's edges, those that shift the
/// earlier-indexed tool are kept.
inline LayerAssignment apply_schema_shift(LayerAssignment assignment, const ToolCatalog& catalog,
                                          ShiftStats* stats = nullptr) {
  const std::size_t n = assignment.tools.size();
  const int last = assignment.num_layers - 1;
  std::vector<const ToolDoc*> docs(n);
  std::vector<SchemaIndex> schemas(n);
  for (std::size_t i = 0; i < n; ++i) {
    docs[i] = &catalog.at(assignment.tools[i].tool_id);
    schemas[i] = catalog.schema(assignment.tools[i].tool_id);
  }

  std::vector<std::pair<std::size_t, std::size_t>> candidates;  // (producer, consumer)
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b && detail::feeds(*docs[a], schemas[a], schemas[b])) candidates.emplace_back(a, b);
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    return (x.second < x.first) > (y.second < y.first);
  });

  std::vector<std::vector<std::size_t>> out_edges(n);
  auto reaches = [&](std::size_t from, std::size_t to) {
    std::vector<char> seen(n, 0);
    std::vector<std::size_t> stack{from};
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      if (v == to) return true;
      if (seen[v]) continue;
      seen[v] = 1;
      for (auto w : out_edges[v]) stack.push_back(w);
    }
    return false;
  };
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (auto [a, b] : candidates) {
    if (reaches(b, a)) continue;
    out_edges[a].push_back(b);
    edges.emplace_back(a, b);
  }
  std::sort(edges.begin(), edges.end());

  std::set<std::pair<std::size_t, std::size_t>> pinned;
  const int max_passes = static_cast<int>(n) * assignment.num_layers;
  int passes = 0;
  bool changed = true;
  while (changed && passes < max_passes) {
    changed = false;
    ++passes;
    for (auto [a, b] : edges) {
      auto& producer = assignment.tools[a];
      auto& consumer = assignment.tools[b];
      if (consumer.layer > producer.layer) continue;
      if (producer.layer >= last) {
        pinned.emplace(a, b);
        if (consumer.layer < last) {
          consumer.layer = last;
          consumer.source = LayerSource::Shifted;
          changed = true;
        }
        continue;
      }
      consumer.layer = producer.layer + 1;
      consumer.source = LayerSource::Shifted;
      changed = true;
    }
  }
  for (auto [a, b] : pinned) {
    assignment.warnings.push_back(assignment.tools[b].tool_id + " depends on " + assignment.tools[a].tool_id +
                                  " but both sit at the last layer");
  }
  if (stats) stats->passes = passes;
  return assignment;
}

}  // namespace layerflow
