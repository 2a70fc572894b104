#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "layerflow/executor.hpp"

namespace layerflow {

// ---- flat baseline ----

namespace templates {

// Comparator only: one growing context, every tool visible on every turn.
inline constexpr std::string_view kFlatStep =
    "[Turn {turn_id}/{step_cap}]\n"
    "Available tools: {tool_names}\n"
    "\n"
    "Call one tool per turn and wait for its observation. When you can answer, call `Finish' with a JSON object "
    "holding return_type and final_answer, grounded only in the observations above.\n"
    "\n"
    "You MUST respond in this exact format:\n"
    "Action: <tool_name>\n"
    "Action Input: <JSON arguments>";

inline constexpr std::string_view kFlatObservationHeader = "Observation:";

}  // namespace templates

inline std::string render_flat_step(int turn, int cap, std::span<const ToolDoc> tools) {
  std::string names;
  for (const auto& t : tools) names += (names.empty() ? "" : ", ") + t.name;
  std::pair<std::string_view, std::string> values[] = {
      {"turn_id", std::to_string(turn)}, {"step_cap", std::to_string(cap)}, {"tool_names", names}};
  return substitute(templates::kFlatStep, values);
}

/// Single-context executor: all task tools in every turn, history grows with
/// each turn, same gate and repair path, stops at Finish or the step cap.
inline Trajectory flat_baseline_run(const Task& task, const ToolCatalog& catalog, Caller& caller,
                                    ToolBackend& backend, const ExecConfig& cfg) {
  for (const auto& id : task.tool_ids)
    if (!catalog.contains(id)) throw Error(ErrorCode::UnknownTool, "task " + task.id + " names unknown tool " + id);
  Trajectory traj;
  traj.task_id = task.id;
  traj.mode = "flat";
  auto task_catalog = catalog.subset(task.tool_ids);
  traj.assignment.num_layers = 1;
  for (const auto& t : task_catalog.tools()) traj.assignment.tools.push_back({t.tool_id, 0, LayerSource::Predicted});
  RepairBudget budget(cfg.budget);
  std::vector<ToolDoc> docs(task_catalog.tools().begin(), task_catalog.tools().end());
  std::vector<ToolDoc> with_finish = docs;
  with_finish.push_back(ToolDoc{"Finish", "Finish", "", std::nullopt, std::nullopt, Json::object()});

  std::vector<ChatMessage> history = executor_preamble(task.query);
  Json tool_records = Json::array();
  for (const auto& d : docs) tool_records.push_back(tool_schema_record(d));

  try {
    for (int turn = 1; turn <= cfg.step_cap && !traj.finish && !traj.finish_parse_failed; ++turn) {
      StepRecord step;
      step.kind = "flat";
      step.layer = turn - 1;
      step.prompt.messages = history;
      step.prompt.messages.push_back({"user", render_flat_step(turn, cfg.step_cap, docs)});
      step.prompt.tools = tool_records;
      auto reply = caller.respond({task.id, "flat", step.prompt, 0.0});
      step.raw_output = reply.text;
      detail::account(step, reply, traj.counters);

      std::vector<Observation> skipped;
      auto calls = detail::calls_from_turn(reply.text, with_finish, turn - 1, skipped);
      step.calls = calls;
      std::vector<ToolCall> tool_calls;
      std::optional<ToolCall> finish_call;
      for (auto& c : calls) {
        if (c.tool_id == "Finish") {
          finish_call = std::move(c);
          break;
        }
        tool_calls.push_back(std::move(c));
      }
      auto obs = dispatch_layer(tool_calls,
                                {catalog, backend, caller, budget, task.id, turn - 1, cfg.parallel, cfg.repair_empty});
      std::vector<Observation> turn_obs;
      for (auto& o : skipped) turn_obs.push_back(std::move(o));
      for (auto& o : obs) turn_obs.push_back(std::move(o));

      history.push_back({"assistant", reply.text});
      std::string block(templates::kFlatObservationHeader);
      auto views = visible_observations(turn_obs);
      if (views.empty()) block += "\n" + std::string(templates::kEmptySummary);
      for (const auto& v : views) block += "\n" + observation_line(v);
      if (!finish_call) history.push_back({"user", std::move(block)});

      if (finish_call) {
        const Json& a = finish_call->arguments;
        if (a.contains("return_type") && a["return_type"].is_string() && a.contains("final_answer") &&
            a["final_answer"].is_string())
          traj.finish = FinishRecord{a["return_type"].get<std::string>(), a["final_answer"].get<std::string>()};
        else
          traj.finish_parse_failed = true;
      }
      for (auto& o : turn_obs) traj.observations.push_back(std::move(o));
      traj.steps.push_back(std::move(step));
    }
    if (!traj.finish && !traj.finish_parse_failed) traj.step_cap_reached = true;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::CallerUnavailable && e.code() != ErrorCode::BackendUnavailable &&
        e.code() != ErrorCode::ScriptExhausted)
      throw;
    traj.aborted = std::string(to_string(e.code())) + ": " + e.what();
  }
  traj.budget = budget.state();
  return traj;
}

// ---- reporting ----

struct RunRow {
  std::string task_id;
  bool solved = false;
  int steps = 0;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  int budget_used = 0;
  std::string failure_class;  // empty when solved
};

struct RunReport {
  std::vector<RunRow> rows;
  double pass_rate = 0;
  double mean_steps = 0;
  double mean_tokens = 0;
  double mean_prompt_tokens = 0;
};

inline bool answer_has_facts(const Task& task, const std::string& answer) {
  for (const auto& f : task.facts)
    if (answer.find(f) == std::string::npos) return false;
  if (task.gold_answer && answer.find(*task.gold_answer) == std::string::npos) return false;
  return true;
}

inline bool is_solved(const Trajectory& t, const Task& task) {
  return !t.aborted && t.finish && t.finish->return_type == "give_answer" && answer_has_facts(task, t.finish->final_answer);
}

/// Most specific reason an unsolved trajectory failed; empty when solved.
inline std::string failure_class(const Trajectory& t, const Task& task) {
  if (is_solved(t, task)) return "";
  if (t.aborted) return "aborted";
  if (t.step_cap_reached) return "step_cap";
  auto any = [&](auto pred) { return std::any_of(t.observations.begin(), t.observations.end(), pred); };
  if (t.finish_parse_failed ||
      any([](const Observation& o) { return o.failure == FailureKind::ParseError || o.failure == FailureKind::UnknownTool; }))
    return "parse_failure";
  bool unrepaired_gate = any([](const Observation& o) {
    return o.status == ObservationStatus::Error && o.failure == FailureKind::GateReject;
  });
  bool unrepaired_runtime = any([](const Observation& o) {
    return o.status == ObservationStatus::Error && o.failure == FailureKind::RuntimeError;
  });
  bool exhausted = t.budget.limit > 0 && any([](const Observation& o) {
                     return o.repair && o.repair->result == RepairResult::Exhausted;
                   });
  if (exhausted) return "budget_exhausted";
  if (unrepaired_gate) return "gate_reject_unrepaired";
  if (unrepaired_runtime) return "runtime_error_unrepaired";
  if (t.finish && t.finish->return_type != "give_answer") return "gave_up";
  return "missing_fact";
}

inline void recompute_aggregates(RunReport& r) {
  r.pass_rate = r.mean_steps = r.mean_tokens = r.mean_prompt_tokens = 0;
  if (r.rows.empty()) return;
  double solved = 0, steps = 0, tokens = 0, prompt = 0;
  for (const auto& row : r.rows) {
    solved += row.solved ? 1 : 0;
    steps += row.steps;
    tokens += static_cast<double>(row.prompt_tokens + row.completion_tokens);
    prompt += static_cast<double>(row.prompt_tokens);
  }
  const double n = static_cast<double>(r.rows.size());
  r.pass_rate = solved / n;
  r.mean_steps = steps / n;
  r.mean_tokens = tokens / n;
  r.mean_prompt_tokens = prompt / n;
}

/// One row per task, in task order.
inline RunReport evaluate_run(std::span<const Trajectory> trajectories, std::span<const Task> tasks) {
  std::map<std::string, const Trajectory*> by_id;
  for (const auto& t : trajectories) by_id[t.task_id] = &t;
  RunReport report;
  for (const auto& task : tasks) {
    auto it = by_id.find(task.id);
    if (it == by_id.end()) throw Error(ErrorCode::MissingTrajectory, "no trajectory for task " + task.id);
    const Trajectory& t = *it->second;
    report.rows.push_back({task.id, is_solved(t, task), t.counters.steps, t.counters.prompt_tokens,
                           t.counters.completion_tokens, t.budget.used, failure_class(t, task)});
  }
  recompute_aggregates(report);
  return report;
}

inline Json report_to_json(const RunReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"task_id", row.task_id},
                    {"solved", row.solved},
                    {"steps", row.steps},
                    {"prompt_tokens", row.prompt_tokens},
                    {"completion_tokens", row.completion_tokens},
                    {"budget_used", row.budget_used},
                    {"failure_class", row.failure_class.empty() ? Json() : Json(row.failure_class)}});
  return Json{{"rows", rows},
              {"aggregates",
               {{"pass_rate", r.pass_rate},
                {"mean_steps", r.mean_steps},
                {"mean_tokens", r.mean_tokens},
                {"mean_prompt_tokens", r.mean_prompt_tokens}}}};
}

inline std::string report_to_csv(const RunReport& r) {
  std::ostringstream out;
  out << "task_id,solved,steps,prompt_tokens,completion_tokens,budget_used,failure_class\n";
  for (const auto& row : r.rows)
    out << row.task_id << ',' << (row.solved ? 1 : 0) << ',' << row.steps << ',' << row.prompt_tokens << ','
        << row.completion_tokens << ',' << row.budget_used << ',' << row.failure_class << '\n';
  return out.str();
}

/// (wins + ties / 2) / total.
inline double sowr(long long n_win, long long n_tie, long long n_total) {
  if (n_total == 0) throw Error(ErrorCode::ZeroTotal, "sowr needs a non-zero total");
  if (n_win < 0 || n_tie < 0 || n_total < 0 || n_win + n_tie > n_total)
    throw Error(ErrorCode::InvalidArgument, "sowr needs 0 <= wins + ties <= total");
  return (static_cast<double>(n_win) + static_cast<double>(n_tie) / 2.0) / static_cast<double>(n_total);
}

struct Comparison {
  double tokens_a = 0, tokens_b = 0, steps_a = 0, steps_b = 0;
  double prompt_tokens_a = 0, prompt_tokens_b = 0;
  // Percent saved by a relative to b.
  double token_reduction = 0, prompt_token_reduction = 0, step_reduction = 0;
};

inline Comparison compare_runs(const RunReport& a, const RunReport& b) {
  Comparison c{a.mean_tokens, b.mean_tokens, a.mean_steps, b.mean_steps, a.mean_prompt_tokens, b.mean_prompt_tokens};
  auto pct = [](double x, double base) { return base == 0 ? 0.0 : 100.0 * (base - x) / base; };
  c.token_reduction = pct(a.mean_tokens, b.mean_tokens);
  c.prompt_token_reduction = pct(a.mean_prompt_tokens, b.mean_prompt_tokens);
  c.step_reduction = pct(a.mean_steps, b.mean_steps);
  return c;
}

inline std::string format_comparison(const Comparison& c, std::string_view name_a = "layered",
                                     std::string_view name_b = "flat") {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "| Method | Total Tokens | Steps |\n"
                "|---|---|---|\n"
                "| %.*s | %.1f | %.2f |\n"
                "| %.*s | %.1f (-%.1f%%) | %.2f (-%.1f%%) |\n",
                static_cast<int>(name_b.size()), name_b.data(), c.tokens_b, c.steps_b,
                static_cast<int>(name_a.size()), name_a.data(), c.tokens_a, c.token_reduction, c.steps_a,
                c.step_reduction);
  return buf;
}

// ---- run directories ----

inline void write_trajectory(const std::filesystem::path& dir, const Trajectory& t) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / (t.task_id + ".json"), std::ios::binary);
  out << trajectory_to_json(t).dump(2) << '\n';
}

inline std::vector<Trajectory> read_run_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Trajectory> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    out.push_back(trajectory_from_json(Json::parse(in)));
  }
  return out;
}

}  // namespace layerflow
