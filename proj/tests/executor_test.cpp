#include <gtest/gtest.h>

#include "layerflow/sim/scenarios.hpp"
#include "layerflow/sim/synth.hpp"

namespace layerflow {
namespace {

using sim::ScriptedCaller;
using sim::SimBackend;

ExecConfig serial() {
  ExecConfig cfg;
  cfg.parallel = false;
  return cfg;
}

TEST(Executor, JobSearchRunsTwoLayersThenFinish) {
  auto s = sim::job_search_scenario();
  ScriptedCaller caller(s.script);
  SimBackend backend(s.specs);
  auto t = run_trajectory(s.task, s.catalog, s.assignment, caller, backend, ExecConfig{});
  ASSERT_FALSE(t.aborted);
  ASSERT_EQ(t.steps.size(), 3u);
  EXPECT_EQ(t.counters.steps, 3);
  EXPECT_EQ(t.steps[0].kind, "layer");
  EXPECT_EQ(t.steps[0].layer, 0);
  EXPECT_EQ(t.steps[1].layer, 1);
  EXPECT_EQ(t.steps[2].kind, "finish");
  ASSERT_EQ(t.observations.size(), 2u);
  for (const auto& o : t.observations) EXPECT_EQ(o.status, ObservationStatus::Ok);

  // The detail call carries the url the search returned.
  auto search = Json::parse(t.observations[0].body);
  EXPECT_EQ(t.observations[1].request_args["joburl"], search["joburl"]);
  ASSERT_TRUE(t.finish);
  EXPECT_EQ(t.finish->return_type, "give_answer");
  EXPECT_NE(t.finish->final_answer.find("Main Office GmbH"), std::string::npos);
  EXPECT_NE(t.finish->final_answer.find(search["joburl"].get<std::string>()), std::string::npos);
  EXPECT_EQ(t.budget.used, 0);
  EXPECT_GT(t.counters.prompt_tokens, 0u);
}

TEST(Executor, EachLayerPromptExposesOnlyItsTools) {
  auto s = sim::parcel_tracking_scenario();
  ScriptedCaller caller(s.script);
  SimBackend backend(s.specs);
  auto t = run_trajectory(s.task, s.catalog, s.assignment, caller, backend, ExecConfig{});
  ASSERT_EQ(t.steps.size(), 4u);
  for (const auto& step : t.steps) {
    if (step.kind != "layer") continue;
    auto text = step.prompt.text();
    EXPECT_NE(text.find("[Step " + std::to_string(step.layer + 1) + "/3]"), std::string::npos);
    auto names = step.prompt.tool_names();
    for (const auto& id : s.task.tool_ids) {
      bool in_layer = s.assignment.layer_of(id) == step.layer;
      EXPECT_EQ(std::find(names.begin(), names.end(), id) != names.end(), in_layer) << id;
      if (s.assignment.layer_of(id) > step.layer) {
        EXPECT_EQ(text.find(id), std::string::npos) << id;
      }
    }
  }
  ASSERT_TRUE(t.finish);
  for (const auto& f : s.task.facts) EXPECT_NE(t.finish->final_answer.find(f), std::string::npos) << f;
  EXPECT_EQ(backend.requests(), 3u);
}

TEST(Executor, EmptyLayersAreSkipped) {
  auto s = sim::job_search_scenario();
  auto flat = make_assignment(s.task.tool_ids, std::vector<int>{0, 0}, 5);
  sim::CallerScript script;
  script.responses[s.task.id]["layer"] = {
      "Action: searchoffers_for_google_jobs\nAction Input: {\"keyword\": \"secretary\"}"};
  script.responses[s.task.id]["finish"] = {
      "Action: Finish\nAction Input: {\"return_type\": \"give_answer\", \"final_answer\": \"done\"}"};
  ScriptedCaller caller(script);
  SimBackend backend(s.specs);
  auto t = run_trajectory(s.task, s.catalog, flat, caller, backend, ExecConfig{});
  EXPECT_EQ(t.steps.size(), 2u);
  EXPECT_EQ(t.steps[0].prompt.tool_names().size(), 2u);
  EXPECT_NE(t.steps[0].prompt.text().find("[Step 1/1]"), std::string::npos);
}

TEST(Executor, CallOutsideTheLayerIsSkippedAndNeverShown) {
  auto s = sim::job_search_scenario();
  auto& r = s.script.responses[s.task.id]["layer"];
  r[0] = "Action: offerinfo_for_google_jobs\nAction Input: {\"joburl\": \"x\"}";
  ScriptedCaller caller(s.script);
  SimBackend backend(s.specs);
  auto t = run_trajectory(s.task, s.catalog, s.assignment, caller, backend, ExecConfig{});
  ASSERT_GE(t.observations.size(), 1u);
  EXPECT_EQ(t.observations[0].status, ObservationStatus::Skipped);
  EXPECT_EQ(t.observations[0].failure, FailureKind::UnknownTool);
  EXPECT_EQ(t.observations[0].tool_id, "offerinfo_for_google_jobs");
  // Layer 1 still runs; its prompt carries no record of the skipped call.
  EXPECT_EQ(t.steps[1].prompt.text().find("Previous tool results"), std::string::npos);
  EXPECT_EQ(backend.requests(), 1u);  // only the layer-1 call reached the backend
  EXPECT_EQ(t.observations[1].request_args["joburl"], "unavailable");
}

TEST(Executor, TurnWithoutActionIsRecordedAndRunContinues) {
  auto s = sim::job_search_scenario();
  s.script.responses[s.task.id]["layer"][0] = "I am not sure what to do.";
  ScriptedCaller caller(s.script);
  SimBackend backend(s.specs);
  auto t = run_trajectory(s.task, s.catalog, s.assignment, caller, backend, ExecConfig{});
  EXPECT_EQ(t.steps.size(), 3u);
  EXPECT_EQ(t.observations[0].status, ObservationStatus::Skipped);
  EXPECT_EQ(t.observations[0].failure, FailureKind::None);
  EXPECT_TRUE(t.finish);
}

TEST(Executor, MalformedFinishIsFlagged) {
  auto s = sim::job_search_scenario();
  s.script.responses[s.task.id]["finish"] = {"The answer is 42."};
  ScriptedCaller caller(s.script);
  SimBackend backend(s.specs);
  auto t = run_trajectory(s.task, s.catalog, s.assignment, caller, backend, ExecConfig{});
  EXPECT_FALSE(t.finish);
  EXPECT_TRUE(t.finish_parse_failed);
  EXPECT_EQ(t.steps.size(), 3u);
}

TEST(Executor, OutagesAbortButKeepThePartialRecord) {
  auto s = sim::job_search_scenario();
  s.script.responses[s.task.id].erase("finish");
  ScriptedCaller caller(s.script);
  SimBackend backend(s.specs);
  auto t = run_trajectory(s.task, s.catalog, s.assignment, caller, backend, ExecConfig{});
  ASSERT_TRUE(t.aborted);
  EXPECT_NE(t.aborted->find("ScriptExhausted"), std::string::npos);
  EXPECT_EQ(t.observations.size(), 2u);
  EXPECT_FALSE(t.finish);

  auto s2 = sim::job_search_scenario();
  ScriptedCaller caller2(s2.script);
  SimBackend partial({s2.specs[0]});  // the detail tool is missing
  auto t2 = run_trajectory(s2.task, s2.catalog, s2.assignment, caller2, partial, ExecConfig{});
  ASSERT_TRUE(t2.aborted);
  EXPECT_NE(t2.aborted->find("BackendUnavailable"), std::string::npos);
  EXPECT_EQ(t2.steps.size(), 2u);
}

TEST(Executor, RejectsAssignmentsThatMissTools) {
  auto s = sim::job_search_scenario();
  ScriptedCaller caller(s.script);
  SimBackend backend(s.specs);
  auto partial = make_assignment(std::vector<std::string>{"searchoffers_for_google_jobs"}, std::vector<int>{0}, 5);
  EXPECT_THROW(run_trajectory(s.task, s.catalog, partial, caller, backend, ExecConfig{}), Error);
  auto bad = s.task;
  bad.tool_ids.push_back("nope");
  EXPECT_THROW(run_trajectory(bad, s.catalog, s.assignment, caller, backend, ExecConfig{}), Error);
}

TEST(Dispatch, RepairsInEmissionOrderAndNeverRetriesTwice) {
  auto s = sim::job_search_scenario();
  sim::SimToolSpec flaky{"searchoffers_for_google_jobs", sim::Behavior::Flaky, "{}", "", FieldType::String, 1.0, 0, 0};
  SimBackend backend({flaky, s.specs[1]});
  sim::CallerScript script;
  script.defaults["repair"] =
      R"({"tool_calls":[{"name":"searchoffers_for_google_jobs","arguments":{"keyword":"again"}}]})";
  ScriptedCaller caller(script);
  RepairBudget budget(5);
  std::vector<ToolCall> calls{{"searchoffers_for_google_jobs", Json{{"keyword", "a"}}},
                              {"offerinfo_for_google_jobs", Json{{"joburl", 7}}},
                              {"searchoffers_for_google_jobs", Json{{"keyword", "b"}}}};
  auto obs = dispatch_layer(calls, {s.catalog, backend, caller, budget, "t", 0, true, false});
  ASSERT_EQ(obs.size(), 3u);
  // Runtime failures are repaired by the model, re-run once and fail again.
  for (std::size_t i : {0u, 2u}) {
    EXPECT_EQ(obs[i].status, ObservationStatus::Error);
    EXPECT_EQ(obs[i].failure, FailureKind::RuntimeError);
    ASSERT_TRUE(obs[i].repair);
    EXPECT_EQ(obs[i].repair->tier, RepairTier::Model);
    EXPECT_EQ(obs[i].request_args, (Json{{"keyword", "again"}}));
  }
  // The integer url is coerced deterministically.
  EXPECT_EQ(obs[1].status, ObservationStatus::Ok);
  EXPECT_EQ(obs[1].repair->tier, RepairTier::Deterministic);
  EXPECT_EQ(obs[1].request_args, (Json{{"joburl", "7"}}));
  EXPECT_EQ(budget.used(), 3);
  EXPECT_EQ(caller.calls("repair/"), 2u);
  EXPECT_EQ(backend.requests(), 5u);
}

TEST(Dispatch, ExhaustedBudgetLeavesTheErrorInPlace) {
  auto s = sim::job_search_scenario();
  SimBackend backend(s.specs);
  sim::CallerScript script;
  ScriptedCaller caller(script);
  RepairBudget budget(0);
  std::vector<ToolCall> calls{{"offerinfo_for_google_jobs", Json::object()}};
  auto obs = dispatch_layer(calls, {s.catalog, backend, caller, budget, "t", 1, false, false});
  EXPECT_EQ(obs[0].status, ObservationStatus::Error);
  EXPECT_EQ(obs[0].failure, FailureKind::GateReject);
  ASSERT_TRUE(obs[0].repair);
  EXPECT_EQ(obs[0].repair->result, RepairResult::Exhausted);
  EXPECT_EQ(obs[0].repair->charge, 0);
  EXPECT_EQ(backend.requests(), 0u);
  EXPECT_EQ(caller.calls(), 0u);
}

TEST(Dispatch, EmptyBodiesAreRepairedOnlyWhenAsked) {
  auto s = sim::job_search_scenario();
  sim::SimToolSpec empty{"searchoffers_for_google_jobs", sim::Behavior::EmptyBody, "{}", "", FieldType::String, 0, 0, 0};
  SimBackend backend({empty});
  sim::CallerScript script;
  ScriptedCaller caller(script);
  std::vector<ToolCall> calls{{"searchoffers_for_google_jobs", Json{{"keyword", "a"}}}};
  RepairBudget b1(5), b2(5);
  auto quiet = dispatch_layer(calls, {s.catalog, backend, caller, b1, "t", 0, false, false});
  EXPECT_EQ(quiet[0].status, ObservationStatus::Ok);
  EXPECT_EQ(b1.used(), 0);
  auto strict = dispatch_layer(calls, {s.catalog, backend, caller, b2, "t", 0, false, true});
  EXPECT_EQ(strict[0].status, ObservationStatus::Error);
  EXPECT_EQ(b2.used(), 1);
  EXPECT_EQ(strict[0].repair->result, RepairResult::Unrepairable);
}

sim::Suite small_suite(double fault_rate) {
  sim::SuiteConfig cfg;
  cfg.n_tasks = 25;
  cfg.fault_rate = fault_rate;
  return sim::build_eval_suite(cfg);
}

std::vector<std::string> run_all(const sim::Suite& suite, const ExecConfig& cfg) {
  ScriptedCaller caller(suite.script);
  SimBackend backend(suite.specs);
  std::vector<std::string> out;
  for (const auto& task : suite.tasks) {
    auto t = run_trajectory(task, suite.catalog, sim::gold_assignment(task, cfg.num_layers), caller, backend, cfg);
    out.push_back(trajectory_to_json(t).dump());
  }
  return out;
}

TEST(Executor, ParallelAndSerialDispatchProduceIdenticalRecords) {
  auto suite = small_suite(0.3);
  ExecConfig par;
  EXPECT_EQ(run_all(suite, par), run_all(suite, serial()));
}

TEST(Executor, ReplaysAreByteIdenticalAndRoundTrip) {
  auto suite = small_suite(0.3);
  auto a = run_all(suite, ExecConfig{});
  auto b = run_all(suite, ExecConfig{});
  EXPECT_EQ(a, b);
  for (const auto& text : a) {
    auto j = Json::parse(text);
    EXPECT_EQ(trajectory_to_json(trajectory_from_json(j)).dump(), text);
  }
}

TEST(Executor, RepairTurnsStayOffTheMainTrace) {
  auto suite = small_suite(0.3);
  ScriptedCaller caller(suite.script);
  SimBackend backend(suite.specs);
  int repaired = 0;
  for (const auto& task : suite.tasks) {
    auto t = run_trajectory(task, suite.catalog, sim::gold_assignment(task, 5), caller, backend, ExecConfig{});
    ASSERT_FALSE(t.aborted) << *t.aborted;
    EXPECT_EQ(static_cast<int>(t.steps.size()), t.assignment.non_empty_layers() + 1);
    for (const auto& step : t.steps) EXPECT_TRUE(step.kind == "layer" || step.kind == "finish");
    EXPECT_LE(t.budget.used, 5);
    for (const auto& o : t.observations)
      if (o.repair && o.repair->result == RepairResult::Repaired) ++repaired;
  }
  EXPECT_GT(repaired, 0);
  EXPECT_GT(caller.calls("repair/"), 0u);
}

TEST(Tasks, JsonRoundTripAndValidation) {
  auto s = sim::parcel_tracking_scenario();
  auto j = task_to_json(s.task);
  auto back = task_from_json(j);
  EXPECT_EQ(task_to_json(back), j);
  j["query"] = "";
  EXPECT_THROW(task_from_json(j), Error);
  j["query"] = "q";
  j["layers"] = {0};
  EXPECT_THROW(task_from_json(j), Error);
}

}  // namespace
}  // namespace layerflow
