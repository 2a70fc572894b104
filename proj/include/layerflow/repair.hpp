#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <optional>
#include <regex>

#include "layerflow/caller.hpp"
#include "layerflow/gate.hpp"
#include "layerflow/parse.hpp"

namespace layerflow {

struct BudgetState {
  int limit = 5;
  int used = 0;
  bool operator==(const BudgetState&) const = default;
};

/// Per-trajectory repair budget shared by all calls; charges are atomic.
class RepairBudget {
 public:
  explicit RepairBudget(int limit = 5) : limit_(limit) {
    if (limit < 0) throw Error(ErrorCode::InvalidArgument, "repair budget must be non-negative");
  }

  /// Takes one unit if any is left.
  bool try_charge() {
    int used = used_.load();
    while (used < limit_)
      if (used_.compare_exchange_weak(used, used + 1)) return true;
    return false;
  }

  int limit() const { return limit_; }
  int used() const { return used_.load(); }
  BudgetState state() const { return {limit_, used()}; }

 private:
  int limit_;
  std::atomic<int> used_{0};
};

enum class RepairResult { Repaired, Exhausted, Unrepairable };
enum class RepairTier { Deterministic, Model, None };

inline std::string_view to_string(RepairResult r) {
  switch (r) {
    case RepairResult::Repaired: return "repaired";
    case RepairResult::Exhausted: return "exhausted";
    case RepairResult::Unrepairable: return "unrepairable";
  }
  return "?";
}

inline std::string_view to_string(RepairTier t) {
  switch (t) {
    case RepairTier::Deterministic: return "deterministic";
    case RepairTier::Model: return "model";
    case RepairTier::None: return "none";
  }
  return "?";
}

struct RepairOutcome {
  RepairResult result = RepairResult::Unrepairable;
  std::optional<ToolCall> call;  // set iff Repaired; arguments are gate-sanitized
  RepairTier tier = RepairTier::None;
  int charge = 0;
  std::string note;  // why Tier 2 failed, when it did
};

namespace detail {

inline std::vector<std::string> unexpected_kwargs(std::string_view text) {
  static const std::regex re(R"(unexpected keyword argument \\?['"]([^'"\\]+)\\?['"])");
  std::vector<std::string> keys;
  std::string s(text);
  for (std::sregex_iterator it(s.begin(), s.end(), re), end; it != end; ++it) keys.push_back((*it)[1].str());
  return keys;
}

inline std::optional<Json> coerce(const Json& value, FieldType expected) {
  if (value.is_string()) {
    std::string s = value.get<std::string>();
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    if (b == std::string::npos) return std::nullopt;
    std::string_view t(s.data() + b, e - b + 1);
    if (expected == FieldType::Integer) {
      long long v = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec == std::errc() && p == t.data() + t.size()) return Json(v);
      double d = 0;
      auto [p2, ec2] = std::from_chars(t.data(), t.data() + t.size(), d);
      if (ec2 == std::errc() && p2 == t.data() + t.size() && std::isfinite(d) && d == std::floor(d) &&
          std::abs(d) < 9.0e15)
        return Json(static_cast<long long>(d));
      return std::nullopt;
    }
    if (expected == FieldType::Number) {
      double d = 0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), d);
      if (ec == std::errc() && p == t.data() + t.size() && std::isfinite(d)) {
        long long i = 0;
        auto [pi, eci] = std::from_chars(t.data(), t.data() + t.size(), i);
        if (eci == std::errc() && pi == t.data() + t.size()) return Json(i);
        return Json(d);
      }
      return std::nullopt;
    }
    return std::nullopt;
  }
  if (expected == FieldType::String && value.is_number()) return Json(value.dump());
  return std::nullopt;
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

/// Tier 1: drop offending keys, coerce string/numeric mismatches, fold enum case.
/// Returns nothing when no rule changes the call.
inline std::optional<ToolCall> deterministic_repair(const ToolCall& call, const Diagnosis& diagnosis) {
  if (!call.arguments.is_object()) return std::nullopt;
  ToolCall out = call;
  bool fired = false;

  auto drop = [&](const std::string& key) {
    if (out.arguments.erase(key) > 0) fired = true;
  };
  for (const auto& k : diagnosis.dropped_keys) drop(k);
  for (const auto& k : detail::unexpected_kwargs(diagnosis.runtime_error)) drop(k);

  for (const auto& e : diagnosis.type_errors) {
    if (!out.arguments.contains(e.key)) continue;
    if (auto v = detail::coerce(out.arguments[e.key], e.expected)) {
      out.arguments[e.key] = *v;
      fired = true;
    }
  }

  for (const auto& e : diagnosis.enum_violations) {
    if (!out.arguments.contains(e.key) || !e.value.is_string()) continue;
    const auto wanted = detail::lower(e.value.get<std::string>());
    const Json* match = nullptr;
    int matches = 0;
    for (const auto& a : e.allowed)
      if (a.is_string() && detail::lower(a.get<std::string>()) == wanted) {
        match = &a;
        ++matches;
      }
    if (matches == 1) {
      out.arguments[e.key] = *match;
      fired = true;
    }
  }
  if (!fired) return std::nullopt;
  return out;
}

/// Text handed to the model in the repair prompt.
inline std::string repair_error_text(const Diagnosis& d) {
  std::string s = diagnosis_summary(d);
  return s.empty() ? "unknown error" : s;
}

struct LlmRepairAttempt {
  std::optional<ToolCall> call;
  std::string note;
};

/// Tier 2: one off-trace caller turn with the repair prompt; the reply must be a
/// single tool call for the same tool.
inline LlmRepairAttempt llm_repair(const ToolCall& call, const ToolDoc& tool, const SchemaIndex& schema,
                                   const Diagnosis& diagnosis, Caller& caller, const std::string& task_id) {
  CallerRequest req{task_id, "repair/" + tool.tool_id,
                    build_repair_prompt(tool, schema, call.arguments, repair_error_text(diagnosis)), 0.0};
  try {
    auto reply = caller.respond(req);
    std::vector<std::string> allowed{tool.name};
    auto parsed = parse_caller_output(reply.text, allowed, ParseMode::Repair);
    ToolCall repaired{tool.tool_id, std::move(parsed.calls.front().arguments)};
    return {std::move(repaired), ""};
  } catch (const Error& e) {
    return {std::nullopt, std::string(to_string(e.code())) + ": " + e.what()};
  }
}

/// The repair operator: budget check, Tier 1, then Tier 2. A returned call has
/// passed the gate. One budget unit per invocation that reaches a tier.
inline RepairOutcome repair_operator(const ToolCall& call, const ToolDoc& tool, const SchemaIndex& schema,
                                     const Diagnosis& diagnosis, RepairBudget& budget, Caller& caller,
                                     const std::string& task_id) {
  RepairOutcome out;
  if (!budget.try_charge()) {
    out.result = RepairResult::Exhausted;
    return out;
  }
  out.charge = 1;
  if (auto t1 = deterministic_repair(call, diagnosis)) {
    auto g = gate(*t1, schema);
    if (g.accepted()) {
      out.result = RepairResult::Repaired;
      out.tier = RepairTier::Deterministic;
      out.call = ToolCall{call.tool_id, std::move(g.sanitized_args)};
      return out;
    }
  }
  auto t2 = llm_repair(call, tool, schema, diagnosis, caller, task_id);
  if (t2.call) {
    auto g = gate(*t2.call, schema);
    if (g.accepted()) {
      out.result = RepairResult::Repaired;
      out.tier = RepairTier::Model;
      out.call = ToolCall{call.tool_id, std::move(g.sanitized_args)};
      return out;
    }
    out.note = "model repair rejected by gate: " + diagnosis_summary(g.diagnosis);
  } else {
    out.note = t2.note;
  }
  out.result = RepairResult::Unrepairable;
  return out;
}

}  // namespace layerflow
