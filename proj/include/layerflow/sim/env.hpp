#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "layerflow/backend.hpp"
#include "layerflow/caller.hpp"

namespace layerflow::sim {

enum class Behavior { Ok, MissingFieldError, WrongTypeError, UnexpectedKwargError, EmptyBody, Flaky };

inline std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::Ok: return "ok";
    case Behavior::MissingFieldError: return "missing_field_error";
    case Behavior::WrongTypeError: return "wrong_type_error";
    case Behavior::UnexpectedKwargError: return "unexpected_kwarg_error";
    case Behavior::EmptyBody: return "empty_body";
    case Behavior::Flaky: return "flaky";
  }
  return "?";
}

inline Behavior parse_behavior(std::string_view text) {
  for (auto b : {Behavior::Ok, Behavior::MissingFieldError, Behavior::WrongTypeError, Behavior::UnexpectedKwargError,
                 Behavior::EmptyBody, Behavior::Flaky})
    if (to_string(b) == text) return b;
  throw Error(ErrorCode::InvalidArgument, "unknown sim behavior '" + std::string(text) + "'");
}

/// A simulated tool. Every behavior other than empty_body answers with the
/// rendered `payload` when its fault condition does not hold:
///   missing_field_error    fails when `key` is absent
///   wrong_type_error       fails when `key` is present but not of `type`
///   unexpected_kwarg_error fails when `key` is present
///   flaky                  fails with probability `p`
/// Payload templates may use `{{arg:<key>}}` and `{{hash:<salt>}}`, the latter a
/// short digest of the tool id, the arguments and the salt.
struct SimToolSpec {
  std::string tool_id;
  Behavior behavior = Behavior::Ok;
  std::string payload = "{}";
  std::string key;
  FieldType type = FieldType::String;
  double p = 0.0;
  std::uint64_t seed = 0;
  int latency_ms = 0;
};

inline Json spec_to_json(const SimToolSpec& s) {
  Json j{{"tool", s.tool_id}, {"behavior", std::string(to_string(s.behavior))}, {"payload", s.payload}};
  if (!s.key.empty()) j["key"] = s.key;
  if (s.behavior == Behavior::WrongTypeError) j["type"] = std::string(to_string(s.type));
  if (s.behavior == Behavior::Flaky) {
    j["p"] = s.p;
    j["seed"] = s.seed;
  }
  if (s.latency_ms) j["latency_ms"] = s.latency_ms;
  return j;
}

inline SimToolSpec spec_from_json(const Json& j) {
  SimToolSpec s;
  s.tool_id = j.at("tool").get<std::string>();
  s.behavior = parse_behavior(j.value("behavior", "ok"));
  s.payload = j.value("payload", "{}");
  s.key = j.value("key", "");
  if (j.contains("type")) {
    auto t = parse_field_type(j["type"].get<std::string>());
    if (!t) throw Error(ErrorCode::InvalidArgument, "bad type in sim spec for " + s.tool_id);
    s.type = *t;
  }
  s.p = j.value("p", 0.0);
  s.seed = j.value("seed", std::uint64_t{0});
  s.latency_ms = j.value("latency_ms", 0);
  if (!(s.p >= 0.0 && s.p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "flaky p outside [0,1] for " + s.tool_id);
  if ((s.behavior == Behavior::MissingFieldError || s.behavior == Behavior::WrongTypeError ||
       s.behavior == Behavior::UnexpectedKwargError) &&
      s.key.empty())
    throw Error(ErrorCode::InvalidArgument, "sim behavior needs a key for " + s.tool_id);
  return s;
}

inline std::string short_digest(std::uint64_t h) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string s(8, '0');
  for (int i = 7; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = hex[h & 15];
  return s;
}

inline std::string json_escape(std::string_view raw) {
  std::string s = Json(std::string(raw)).dump();
  return s.substr(1, s.size() - 2);
}

/// Expands `{{arg:k}}` and `{{hash:salt}}` in a payload template.
inline std::string render_payload(const SimToolSpec& spec, const Json& args) {
  const std::string& t = spec.payload;
  std::string out;
  std::size_t i = 0;
  while (i < t.size()) {
    auto open = t.find("{{", i);
    if (open == std::string::npos) break;
    auto close = t.find("}}", open);
    if (close == std::string::npos) break;
    out.append(t, i, open - i);
    std::string_view token(t.data() + open + 2, close - open - 2);
    if (token.starts_with("arg:")) {
      std::string key(token.substr(4));
      if (args.is_object() && args.contains(key))
        out += args[key].is_string() ? json_escape(args[key].get<std::string>()) : json_escape(args[key].dump());
    } else if (token.starts_with("hash:")) {
      out += short_digest(mix_key({hash_string(spec.tool_id), hash_string(args.dump()), hash_string(token.substr(5))}));
    } else {
      out.append(t, open, close + 2 - open);
    }
    i = close + 2;
  }
  out.append(t, i, std::string::npos);
  return out;
}

inline std::string error_body(std::string_view message) { return Json{{"error", std::string(message)}}.dump(); }

/// Pure function of (spec, args, context, run seed).
inline BackendResponse simulated_invoke(const SimToolSpec& spec, const Json& args, const InvocationContext& ctx,
                                        std::uint64_t run_seed = 0) {
  if (spec.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(spec.latency_ms));
  bool has_key = args.is_object() && args.contains(spec.key);
  switch (spec.behavior) {
    case Behavior::Ok: break;
    case Behavior::MissingFieldError:
      if (!has_key) return {false, error_body("missing required field '" + spec.key + "'")};
      break;
    case Behavior::WrongTypeError:
      if (has_key && !value_conforms(args[spec.key], spec.type))
        return {false, error_body("field '" + spec.key + "' must be of type " + std::string(to_string(spec.type)))};
      break;
    case Behavior::UnexpectedKwargError:
      if (has_key)
        return {false, error_body(spec.tool_id + "() got an unexpected keyword argument '" + spec.key + "'")};
      break;
    case Behavior::EmptyBody: return {false, ""};
    case Behavior::Flaky: {
      Rng rng(mix_key({run_seed, spec.seed, hash_string(spec.tool_id), hash_string(ctx.task_id),
                       static_cast<std::uint64_t>(ctx.layer), static_cast<std::uint64_t>(ctx.ordinal),
                       static_cast<std::uint64_t>(ctx.attempt)}));
      if (rng.uniform() < spec.p) return {false, error_body("transient failure, please retry")};
      break;
    }
  }
  return {false, render_payload(spec, args)};
}

class SimBackend : public ToolBackend {
 public:
  explicit SimBackend(std::vector<SimToolSpec> specs, std::uint64_t run_seed = 0) : run_seed_(run_seed) {
    for (auto& s : specs) specs_[s.tool_id] = std::move(s);
  }

  BackendResponse invoke(const ToolCall& call, const InvocationContext& ctx) override {
    auto it = specs_.find(call.tool_id);
    if (it == specs_.end()) throw Error(ErrorCode::BackendUnavailable, "no simulated tool " + call.tool_id);
    ++requests_;
    return simulated_invoke(it->second, call.arguments, ctx, run_seed_);
  }

  std::size_t requests() const { return requests_.load(); }

 private:
  std::map<std::string, SimToolSpec> specs_;
  std::uint64_t run_seed_;
  std::atomic<std::size_t> requests_{0};
};

inline std::vector<SimToolSpec> load_sim_specs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<SimToolSpec> out;
  for (const auto& j : Json::parse(in)) out.push_back(spec_from_json(j));
  return out;
}

inline Json specs_to_json(std::span<const SimToolSpec> specs) {
  Json j = Json::array();
  for (const auto& s : specs) j.push_back(spec_to_json(s));
  return j;
}

// ---- scripted caller ----

/// Literal responses keyed by (task, step kind, occurrence). Defaults apply per
/// kind, first at task level then globally; "repair" covers every repair/<tool>.
struct CallerScript {
  std::map<std::string, std::map<std::string, std::vector<std::string>>> responses;
  std::map<std::string, std::map<std::string, std::string>> task_defaults;
  std::map<std::string, std::string> defaults;
};

inline Json script_to_json(const CallerScript& s) {
  return Json{{"responses", s.responses}, {"task_defaults", s.task_defaults}, {"defaults", s.defaults}};
}

inline CallerScript script_from_json(const Json& j) {
  CallerScript s;
  if (j.contains("responses")) s.responses = j["responses"].get<decltype(s.responses)>();
  if (j.contains("task_defaults")) s.task_defaults = j["task_defaults"].get<decltype(s.task_defaults)>();
  if (j.contains("defaults")) s.defaults = j["defaults"].get<decltype(s.defaults)>();
  return s;
}

inline CallerScript load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return script_from_json(Json::parse(in));
}

/// Value of `key` in the newest `<tool_id>: <json>` line of `text`, or nullopt.
/// Lines flagged `[error]` never resolve.
inline std::optional<std::string> lookup_observation(std::string_view text, std::string_view tool_id,
                                                     std::string_view key) {
  std::optional<std::string> found;
  std::string prefix = std::string(tool_id) + ": ";
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = text.substr(pos, eol - pos);
    if (line.starts_with(prefix)) {
      auto body = line.substr(prefix.size());
      if (body.starts_with("[error]")) {
        found.reset();
      } else {
        auto j = Json::parse(body, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains(std::string(key))) {
          const Json& v = j[std::string(key)];
          found = v.is_string() ? v.get<std::string>() : v.dump();
        } else {
          found.reset();
        }
      }
    }
    pos = eol + 1;
  }
  return found;
}

inline constexpr std::string_view kUnresolved = "unavailable";

/// Expands `{{from:<tool_id>:<key>}}` against the observation lines of `prompt_text`.
inline std::string resolve_placeholders(std::string_view response, std::string_view prompt_text) {
  std::string out;
  std::size_t i = 0;
  while (i < response.size()) {
    auto open = response.find("{{from:", i);
    if (open == std::string_view::npos) break;
    auto close = response.find("}}", open);
    if (close == std::string_view::npos) break;
    out.append(response.substr(i, open - i));
    auto ref = response.substr(open + 7, close - open - 7);
    auto colon = ref.rfind(':');
    std::optional<std::string> value;
    if (colon != std::string_view::npos) value = lookup_observation(prompt_text, ref.substr(0, colon), ref.substr(colon + 1));
    out += json_escape(value.value_or(std::string(kUnresolved)));
    i = close + 2;
  }
  out.append(response.substr(i));
  return out;
}

/// Deterministic stand-in for the language model.
class ScriptedCaller : public Caller {
 public:
  explicit ScriptedCaller(CallerScript script) : script_(std::move(script)) {}

  CallerReply respond(const CallerRequest& request) override {
    std::string raw;
    {
      std::lock_guard lock(mu_);
      std::size_t occurrence = counters_[{request.task_id, request.kind}]++;
      log_.push_back(request);
      raw = lookup(request.task_id, request.kind, occurrence);
    }
    return {resolve_placeholders(raw, request.prompt.text()), std::nullopt, std::nullopt};
  }

  /// Number of turns of `kind` served so far, over all tasks.
  std::size_t calls(std::string_view kind_prefix = "") const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [key, count] : counters_)
      if (key.second.starts_with(kind_prefix)) n += count;
    return n;
  }

  std::vector<CallerRequest> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }

 private:
  std::string lookup(const std::string& task, const std::string& kind, std::size_t occurrence) const {
    if (auto t = script_.responses.find(task); t != script_.responses.end())
      if (auto k = t->second.find(kind); k != t->second.end() && occurrence < k->second.size())
        return k->second[occurrence];
    std::string family = kind.starts_with("repair/") ? "repair" : kind;
    if (auto t = script_.task_defaults.find(task); t != script_.task_defaults.end()) {
      if (auto k = t->second.find(kind); k != t->second.end()) return k->second;
      if (auto k = t->second.find(family); k != t->second.end()) return k->second;
    }
    if (auto k = script_.defaults.find(kind); k != script_.defaults.end()) return k->second;
    if (auto k = script_.defaults.find(family); k != script_.defaults.end()) return k->second;
    throw Error(ErrorCode::ScriptExhausted,
                "no scripted response for " + task + "/" + kind + "#" + std::to_string(occurrence));
  }

  CallerScript script_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, std::size_t> counters_;
  std::vector<CallerRequest> log_;
};

}  // namespace layerflow::sim
