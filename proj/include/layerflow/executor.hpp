#pragma once

#include <fstream>
#include <optional>
#include <thread>

#include "layerflow/backend.hpp"
#include "layerflow/parse.hpp"
#include "layerflow/predictor/assignment.hpp"
#include "layerflow/repair.hpp"

namespace layerflow {

struct Task {
  std::string id;
  std::string query;
  std::vector<std::string> tool_ids;
  std::optional<std::string> gold_answer;
  std::vector<std::string> facts;  // substrings a correct answer must contain
  std::vector<int> gold_layers;    // optional, parallel to tool_ids
};

inline Json task_to_json(const Task& t) {
  Json j{{"id", t.id}, {"query", t.query}, {"tools", t.tool_ids}};
  if (t.gold_answer) j["gold_answer"] = *t.gold_answer;
  if (!t.facts.empty()) j["facts"] = t.facts;
  if (!t.gold_layers.empty()) j["layers"] = t.gold_layers;
  return j;
}

inline Task task_from_json(const Json& j) {
  Task t;
  t.id = j.at("id").get<std::string>();
  t.query = j.at("query").get<std::string>();
  t.tool_ids = j.at("tools").get<std::vector<std::string>>();
  if (j.contains("gold_answer") && j["gold_answer"].is_string()) t.gold_answer = j["gold_answer"].get<std::string>();
  if (j.contains("facts")) t.facts = j["facts"].get<std::vector<std::string>>();
  if (j.contains("layers")) t.gold_layers = j["layers"].get<std::vector<int>>();
  if (t.query.empty()) throw Error(ErrorCode::InvalidArgument, "task " + t.id + " has an empty query");
  if (!t.gold_layers.empty() && t.gold_layers.size() != t.tool_ids.size())
    throw Error(ErrorCode::InvalidArgument, "task " + t.id + ": layers and tools differ in length");
  return t;
}

inline std::vector<Task> load_tasks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<Task> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, "bad task record in " + path);
    tasks.push_back(task_from_json(j));
  }
  return tasks;
}

enum class ObservationStatus { Ok, Error, Skipped };

inline std::string_view to_string(ObservationStatus s) {
  switch (s) {
    case ObservationStatus::Ok: return "ok";
    case ObservationStatus::Error: return "error";
    case ObservationStatus::Skipped: return "skipped";
  }
  return "?";
}

/// Why an observation is not a clean success.
enum class FailureKind { None, GateReject, RuntimeError, UnknownTool, ParseError };

inline std::string_view to_string(FailureKind f) {
  switch (f) {
    case FailureKind::None: return "none";
    case FailureKind::GateReject: return "gate_reject";
    case FailureKind::RuntimeError: return "runtime_error";
    case FailureKind::UnknownTool: return "unknown_tool";
    case FailureKind::ParseError: return "parse_error";
  }
  return "?";
}

struct RepairTrace {
  RepairResult result = RepairResult::Unrepairable;
  RepairTier tier = RepairTier::None;
  int charge = 0;
  Json original_args;
  Json repaired_args;  // null unless repaired
  std::string trigger;
  std::string note;
};

struct Observation {
  int layer = 0;
  std::string tool_id;
  Json request_args = Json::object();
  ObservationStatus status = ObservationStatus::Ok;
  std::string body;
  FailureKind failure = FailureKind::None;
  std::optional<RepairTrace> repair;
};

struct StepRecord {
  std::string kind;  // "layer", "finish" or "flat"
  int layer = -1;
  Prompt prompt;
  std::string raw_output;
  std::vector<ToolCall> calls;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct Counters {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  int steps = 0;
};

struct Trajectory {
  std::string task_id;
  std::string mode = "layered";
  LayerAssignment assignment;
  std::vector<StepRecord> steps;
  std::vector<Observation> observations;
  BudgetState budget;
  std::optional<FinishRecord> finish;
  Counters counters;
  bool finish_parse_failed = false;
  bool step_cap_reached = false;
  std::optional<std::string> aborted;  // caller or backend outage
};

struct ExecConfig {
  int num_layers = 5;
  int budget = 5;
  bool parallel = true;
  bool repair_empty = false;
  int step_cap = 10;  // flat baseline only
};

inline ObservationView view_of(const Observation& o) {
  return {o.tool_id, o.body, o.status == ObservationStatus::Error};
}

/// Observations shown to later turns: everything that actually reached a tool or the gate.
inline std::vector<ObservationView> visible_observations(std::span<const Observation> obs) {
  std::vector<ObservationView> out;
  for (const auto& o : obs)
    if (o.status != ObservationStatus::Skipped) out.push_back(view_of(o));
  return out;
}

namespace detail {

inline void account(StepRecord& step, const CallerReply& reply, Counters& counters) {
  step.prompt_tokens = reply.prompt_tokens.value_or(count_tokens(step.prompt.text()));
  step.completion_tokens = reply.completion_tokens.value_or(count_tokens(reply.text));
  counters.prompt_tokens += step.prompt_tokens;
  counters.completion_tokens += step.completion_tokens;
  counters.steps += 1;
}

template <class F>
void for_each_index(std::size_t n, bool parallel, F&& f) {
  if (!parallel || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> workers;
    workers.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      workers.emplace_back([&, i] {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

struct DispatchContext {
  const ToolCatalog& catalog;
  ToolBackend& backend;
  Caller& caller;
  RepairBudget& budget;
  std::string task_id;
  int layer = 0;
  bool parallel = true;
  bool repair_empty = false;
};

/// Gate, execute, repair and re-execute the calls of one caller turn. The result
/// follows emission order. Phase A (gate and first execution) and phase C
/// (re-execution of repaired calls) run concurrently when `parallel` is set;
/// repairs run in between, in emission order, so budget charges and caller
/// turns never depend on thread timing.
inline std::vector<Observation> dispatch_layer(std::span<const ToolCall> calls, DispatchContext ctx) {
  const std::size_t n = calls.size();
  std::vector<Observation> obs(n);
  std::vector<Diagnosis> pending(n);
  std::vector<char> needs_repair(n, 0);

  auto execute = [&](std::size_t i, const Json& args, int attempt) {
    InvocationContext ic{ctx.task_id, ctx.layer, static_cast<int>(i), attempt};
    auto r = ctx.backend.invoke({calls[i].tool_id, args}, ic);
    obs[i].request_args = args;
    obs[i].body = r.body;
    auto failure = runtime_failure(r, ctx.repair_empty);
    obs[i].status = failure.empty() ? ObservationStatus::Ok : ObservationStatus::Error;
    obs[i].failure = failure.empty() ? FailureKind::None : FailureKind::RuntimeError;
    return failure;
  };

  detail::for_each_index(n, ctx.parallel, [&](std::size_t i) {
    obs[i].layer = ctx.layer;
    obs[i].tool_id = calls[i].tool_id;
    const auto& schema = ctx.catalog.schema(calls[i].tool_id);
    auto g = gate(calls[i], schema);
    if (!g.accepted()) {
      obs[i].request_args = calls[i].arguments;
      obs[i].status = ObservationStatus::Error;
      obs[i].failure = FailureKind::GateReject;
      obs[i].body = diagnosis_summary(g.diagnosis);
      pending[i] = std::move(g.diagnosis);
      needs_repair[i] = 1;
      return;
    }
    auto failure = execute(i, g.sanitized_args, 0);
    if (!failure.empty()) {
      pending[i].runtime_error = failure;
      needs_repair[i] = 1;
    }
  });

  std::vector<char> rerun(n, 0);
  std::vector<Json> repaired_args(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!needs_repair[i]) continue;
    ToolCall failing{calls[i].tool_id, obs[i].failure == FailureKind::GateReject ? calls[i].arguments
                                                                                  : obs[i].request_args};
    const auto& doc = ctx.catalog.at(calls[i].tool_id);
    auto outcome =
        repair_operator(failing, doc, ctx.catalog.schema(calls[i].tool_id), pending[i], ctx.budget, ctx.caller,
                        ctx.task_id);
    RepairTrace trace{outcome.result, outcome.tier, outcome.charge, failing.arguments, Json(),
                      repair_error_text(pending[i]), outcome.note};
    if (outcome.call) {
      trace.repaired_args = outcome.call->arguments;
      repaired_args[i] = outcome.call->arguments;
      rerun[i] = 1;
    }
    obs[i].repair = std::move(trace);
  }

  std::vector<std::size_t> reruns;
  for (std::size_t i = 0; i < n; ++i)
    if (rerun[i]) reruns.push_back(i);
  detail::for_each_index(reruns.size(), ctx.parallel, [&](std::size_t j) {
    std::size_t i = reruns[j];
    execute(i, repaired_args[i], 1);
  });
  return obs;
}

namespace detail {

/// Maps a parsed call's tool name onto the tool id among `tools`.
inline std::optional<std::string> resolve_tool(const std::string& name, std::span<const ToolDoc> tools) {
  for (const auto& t : tools)
    if (t.name == name || t.tool_id == name) return t.tool_id;
  return std::nullopt;
}

inline Observation skipped(int layer, std::string tool_id, std::string reason, FailureKind why) {
  Observation o;
  o.layer = layer;
  o.tool_id = std::move(tool_id);
  o.status = ObservationStatus::Skipped;
  o.body = std::move(reason);
  o.failure = why;
  return o;
}

/// Parses a layer/flat turn into dispatchable calls plus skipped observations.
inline std::vector<ToolCall> calls_from_turn(const std::string& raw, std::span<const ToolDoc> tools, int layer,
                                             std::vector<Observation>& skipped_out) {
  std::vector<std::string> names;
  for (const auto& t : tools) names.push_back(t.name);
  std::vector<ToolCall> calls;
  try {
    auto parsed = parse_caller_output(raw, names, ParseMode::Layer);
    for (auto& c : parsed.calls) calls.push_back({*resolve_tool(c.tool_id, tools), std::move(c.arguments)});
    for (auto& r : parsed.rejected)
      skipped_out.push_back(skipped(layer, r.tool_name, r.detail,
                                    r.reason == ErrorCode::UnknownTool ? FailureKind::UnknownTool
                                                                       : FailureKind::ParseError));
    if (calls.empty() && parsed.rejected.empty())
      skipped_out.push_back(skipped(layer, "", "no tool call in this step", FailureKind::None));
  } catch (const Error& e) {
    bool benign = e.code() == ErrorCode::NoActionFound;
    skipped_out.push_back(skipped(layer, "", std::string(to_string(e.code())) + ": " + e.what(),
                                  benign ? FailureKind::None : FailureKind::ParseError));
  }
  return calls;
}

inline void run_finish(Trajectory& traj, const Task& task, Caller& caller) {
  auto views = visible_observations(traj.observations);
  StepRecord step;
  step.kind = "finish";
  step.prompt = build_finish_prompt(task.query, executed_summary(views));
  auto reply = caller.respond({task.id, "finish", step.prompt, 0.0});
  step.raw_output = reply.text;
  account(step, reply, traj.counters);
  std::vector<std::string> finish_only{"Finish"};
  try {
    auto parsed = parse_caller_output(reply.text, finish_only, ParseMode::Finish);
    traj.finish = parsed.finish;
    step.calls.push_back({"Finish", Json{{"return_type", traj.finish->return_type},
                                         {"final_answer", traj.finish->final_answer}}});
  } catch (const Error&) {
    traj.finish_parse_failed = true;
  }
  traj.steps.push_back(std::move(step));
}

}  // namespace detail

/// Layer-by-layer execution: one caller turn per non-empty layer exposing only
/// that layer's tools, then exactly one Finish turn.
inline Trajectory run_trajectory(const Task& task, const ToolCatalog& catalog, const LayerAssignment& assignment,
                                 Caller& caller, ToolBackend& backend, const ExecConfig& cfg) {
  for (const auto& id : task.tool_ids) {
    if (!catalog.contains(id)) throw Error(ErrorCode::UnknownTool, "task " + task.id + " names unknown tool " + id);
    if (!assignment.covers(id)) throw Error(ErrorCode::InvalidArgument, "assignment does not cover " + id);
  }
  Trajectory traj;
  traj.task_id = task.id;
  traj.assignment = assignment;
  RepairBudget budget(cfg.budget);

  auto task_catalog = catalog.subset(task.tool_ids);
  std::vector<std::vector<ToolDoc>> layers;
  std::vector<int> layer_index;
  for (int k = 0; k < cfg.num_layers; ++k) {
    std::vector<ToolDoc> docs;
    for (const auto& t : task_catalog.tools())
      if (assignment.layer_of(t.tool_id) == k) docs.push_back(t);
    if (!docs.empty()) {
      layers.push_back(std::move(docs));
      layer_index.push_back(k);
    }
  }
  for (const auto& t : assignment.tools)
    if (t.layer >= cfg.num_layers)
      throw Error(ErrorCode::InvalidArgument, t.tool_id + " sits beyond the configured layer count");

  const int total = static_cast<int>(layers.size());
  try {
    for (int i = 0; i < total; ++i) {
      const int k = layer_index[static_cast<std::size_t>(i)];
      StepRecord step;
      step.kind = "layer";
      step.layer = k;
      auto prior = visible_observations(traj.observations);
      step.prompt = build_layer_prompt(i + 1, total, layers[static_cast<std::size_t>(i)], task.query, prior);
      auto reply = caller.respond({task.id, "layer", step.prompt, 0.0});
      step.raw_output = reply.text;
      detail::account(step, reply, traj.counters);

      std::vector<Observation> skipped;
      auto calls = detail::calls_from_turn(reply.text, layers[static_cast<std::size_t>(i)], k, skipped);
      step.calls = calls;
      traj.steps.push_back(std::move(step));
      auto obs = dispatch_layer(calls, {catalog, backend, caller, budget, task.id, k, cfg.parallel, cfg.repair_empty});
      for (auto& o : skipped) traj.observations.push_back(std::move(o));
      for (auto& o : obs) traj.observations.push_back(std::move(o));
    }
    detail::run_finish(traj, task, caller);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::CallerUnavailable && e.code() != ErrorCode::BackendUnavailable &&
        e.code() != ErrorCode::ScriptExhausted)
      throw;
    traj.aborted = std::string(to_string(e.code())) + ": " + e.what();
  }
  traj.budget = budget.state();
  return traj;
}

// ---- serialization ----

inline Json tool_call_to_json(const ToolCall& c) { return Json{{"tool", c.tool_id}, {"arguments", c.arguments}}; }

inline ToolCall tool_call_from_json(const Json& j) {
  return {j.at("tool").get<std::string>(), j.value("arguments", Json::object())};
}

inline Json trajectory_to_json(const Trajectory& t) {
  Json steps = Json::array();
  for (const auto& s : t.steps) {
    Json calls = Json::array();
    for (const auto& c : s.calls) calls.push_back(tool_call_to_json(c));
    steps.push_back({{"kind", s.kind},
                     {"layer", s.layer},
                     {"prompt", prompt_to_json(s.prompt)},
                     {"raw_output", s.raw_output},
                     {"calls", calls},
                     {"prompt_tokens", s.prompt_tokens},
                     {"completion_tokens", s.completion_tokens}});
  }
  Json observations = Json::array();
  for (const auto& o : t.observations) {
    Json j{{"layer", o.layer},
           {"tool", o.tool_id},
           {"request_args", o.request_args},
           {"status", std::string(to_string(o.status))},
           {"body", o.body},
           {"failure", std::string(to_string(o.failure))}};
    if (o.repair) {
      const auto& r = *o.repair;
      j["repair"] = {{"result", std::string(to_string(r.result))},
                     {"tier", std::string(to_string(r.tier))},
                     {"charge", r.charge},
                     {"original_args", r.original_args},
                     {"repaired_args", r.repaired_args},
                     {"trigger", r.trigger},
                     {"note", r.note}};
    }
    observations.push_back(std::move(j));
  }
  Json j{{"task_id", t.task_id},
         {"mode", t.mode},
         {"assignment", assignment_to_json(t.assignment)},
         {"steps", steps},
         {"observations", observations},
         {"budget", {{"limit", t.budget.limit}, {"used", t.budget.used}}},
         {"finish", t.finish ? Json{{"return_type", t.finish->return_type}, {"final_answer", t.finish->final_answer}}
                             : Json()},
         {"counters",
          {{"prompt_tokens", t.counters.prompt_tokens},
           {"completion_tokens", t.counters.completion_tokens},
           {"steps", t.counters.steps}}},
         {"finish_parse_failed", t.finish_parse_failed},
         {"step_cap_reached", t.step_cap_reached},
         {"aborted", t.aborted ? Json(*t.aborted) : Json()}};
  return j;
}

namespace detail {

template <class E>
E enum_from(const std::string& text, std::initializer_list<E> values) {
  for (auto v : values)
    if (to_string(v) == text) return v;
  throw Error(ErrorCode::InvalidArgument, "unknown value '" + text + "'");
}

}  // namespace detail

inline Trajectory trajectory_from_json(const Json& j) {
  Trajectory t;
  t.task_id = j.at("task_id").get<std::string>();
  t.mode = j.value("mode", "layered");
  t.assignment = assignment_from_json(j.at("assignment"));
  for (const auto& s : j.at("steps")) {
    StepRecord r;
    r.kind = s.at("kind").get<std::string>();
    r.layer = s.at("layer").get<int>();
    r.prompt = prompt_from_json(s.at("prompt"));
    r.raw_output = s.at("raw_output").get<std::string>();
    for (const auto& c : s.at("calls")) r.calls.push_back(tool_call_from_json(c));
    r.prompt_tokens = s.at("prompt_tokens").get<std::size_t>();
    r.completion_tokens = s.at("completion_tokens").get<std::size_t>();
    t.steps.push_back(std::move(r));
  }
  for (const auto& o : j.at("observations")) {
    Observation ob;
    ob.layer = o.at("layer").get<int>();
    ob.tool_id = o.at("tool").get<std::string>();
    ob.request_args = o.at("request_args");
    ob.status = detail::enum_from(o.at("status").get<std::string>(),
                                  {ObservationStatus::Ok, ObservationStatus::Error, ObservationStatus::Skipped});
    ob.body = o.at("body").get<std::string>();
    ob.failure = detail::enum_from(o.at("failure").get<std::string>(),
                                   {FailureKind::None, FailureKind::GateReject, FailureKind::RuntimeError,
                                    FailureKind::UnknownTool, FailureKind::ParseError});
    if (o.contains("repair")) {
      const auto& r = o["repair"];
      RepairTrace tr;
      tr.result = detail::enum_from(r.at("result").get<std::string>(),
                                    {RepairResult::Repaired, RepairResult::Exhausted, RepairResult::Unrepairable});
      tr.tier = detail::enum_from(r.at("tier").get<std::string>(),
                                  {RepairTier::Deterministic, RepairTier::Model, RepairTier::None});
      tr.charge = r.at("charge").get<int>();
      tr.original_args = r.at("original_args");
      tr.repaired_args = r.at("repaired_args");
      tr.trigger = r.at("trigger").get<std::string>();
      tr.note = r.at("note").get<std::string>();
      ob.repair = std::move(tr);
    }
    t.observations.push_back(std::move(ob));
  }
  t.budget = {j.at("budget").at("limit").get<int>(), j.at("budget").at("used").get<int>()};
  if (!j.at("finish").is_null())
    t.finish = FinishRecord{j["finish"].at("return_type").get<std::string>(),
                            j["finish"].at("final_answer").get<std::string>()};
  const auto& c = j.at("counters");
  t.counters = {c.at("prompt_tokens").get<std::size_t>(), c.at("completion_tokens").get<std::size_t>(),
                c.at("steps").get<int>()};
  t.finish_parse_failed = j.value("finish_parse_failed", false);
  t.step_cap_reached = j.value("step_cap_reached", false);
  if (j.contains("aborted") && j["aborted"].is_string()) t.aborted = j["aborted"].get<std::string>();
  return t;
}

}  // namespace layerflow
