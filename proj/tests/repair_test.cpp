#include <thread>

#include <gtest/gtest.h>

#include "layerflow/repair.hpp"

namespace layerflow {
namespace {

class FakeCaller : public Caller {
 public:
  explicit FakeCaller(std::string reply) : reply_(std::move(reply)) {}
  CallerReply respond(const CallerRequest& r) override {
    requests.push_back(r);
    if (reply_.empty()) throw Error(ErrorCode::CallerUnavailable, "down");
    return {reply_, std::nullopt, std::nullopt};
  }
  std::vector<CallerRequest> requests;

 private:
  std::string reply_;
};

ToolDoc movies_doc() {
  return {"get_movies_by_year",
          "get_movies_by_year",
          "Bollywood recommendations by genre and year",
          Json{{"type", "object"},
               {"properties",
                {{"genre", {{"type", "string"}}},
                 {"year", {{"type", "string"}}},
                 {"limit", {{"type", "integer"}}},
                 {"sort", {{"type", "string"}, {"enum", {"give_answer", "other"}}}},
                 {"extra", {{"type", "boolean"}}}}},
               {"required", {"genre", "year"}}},
          std::nullopt,
          Json::object()};
}

TEST(DeterministicRepair, CoercesStringEncodedInteger) {
  Diagnosis d;
  d.type_errors.push_back({"qrsize", FieldType::Integer, "string"});
  auto out = deterministic_repair({"t", Json{{"qrsize", "300"}}}, d);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->arguments.at("qrsize"), 300);
  EXPECT_TRUE(out->arguments.at("qrsize").is_number_integer());
}

TEST(DeterministicRepair, CoercesBothDirections) {
  Diagnosis d;
  d.type_errors.push_back({"a", FieldType::Number, "string"});
  d.type_errors.push_back({"b", FieldType::String, "integer"});
  d.type_errors.push_back({"c", FieldType::Integer, "string"});
  auto out = deterministic_repair({"t", Json{{"a", "2.5"}, {"b", 7}, {"c", "seven"}}}, d);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->arguments.at("a"), 2.5);
  EXPECT_EQ(out->arguments.at("b"), "7");
  EXPECT_EQ(out->arguments.at("c"), "seven");
}

TEST(DeterministicRepair, FoldsEnumCaseOnlyOnUniqueMatch) {
  Diagnosis d;
  d.enum_violations.push_back({"r", "Give_Answer", {Json("give_answer")}});
  auto out = deterministic_repair({"t", Json{{"r", "Give_Answer"}}}, d);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->arguments.at("r"), "give_answer");

  Diagnosis ambiguous;
  ambiguous.enum_violations.push_back({"r", "A", {Json("a"), Json("a ")}});
  ambiguous.enum_violations[0].allowed = {Json("a"), Json("A ")};
  EXPECT_TRUE(deterministic_repair({"t", Json{{"r", "A"}}}, ambiguous));  // "a" is the only case-fold match
  ambiguous.enum_violations[0].allowed = {Json("a"), Json("a")};
  EXPECT_FALSE(deterministic_repair({"t", Json{{"r", "A"}}}, ambiguous));
}

TEST(DeterministicRepair, DropsUnexpectedKeywordArguments) {
  Diagnosis d;
  d.runtime_error = R"({"error": "get() got an unexpected keyword argument 'extra'"})";
  auto out = deterministic_repair({"t", Json{{"genre", "x"}, {"extra", true}}}, d);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->arguments, (Json{{"genre", "x"}}));
  Diagnosis dropped;
  dropped.dropped_keys = {"zz"};
  EXPECT_EQ(deterministic_repair({"t", Json{{"zz", 1}}}, dropped)->arguments, Json::object());
}

TEST(DeterministicRepair, CannotInventMissingValues) {
  Diagnosis d;
  d.missing = {"genre"};
  EXPECT_FALSE(deterministic_repair({"t", Json{{"year", "2000"}}}, d));
}

TEST(RepairOperator, ExhaustedBudgetReturnsWithoutCharge) {
  RepairBudget budget(0);
  FakeCaller caller("");
  auto doc = movies_doc();
  Diagnosis d;
  d.missing = {"genre"};
  auto out = repair_operator({doc.tool_id, Json::object()}, doc, build_schema_index(doc), d, budget, caller, "task");
  EXPECT_EQ(out.result, RepairResult::Exhausted);
  EXPECT_EQ(out.charge, 0);
  EXPECT_EQ(budget.used(), 0);
  EXPECT_TRUE(caller.requests.empty());
}

TEST(RepairOperator, TierOneSuccessNeverCallsTheModel) {
  RepairBudget budget(5);
  FakeCaller caller("");
  auto doc = movies_doc();
  Diagnosis d;
  d.runtime_error = "TypeError: unexpected keyword argument 'extra'";
  auto out = repair_operator({doc.tool_id, Json{{"genre", "Comedy"}, {"year", "2000"}, {"extra", true}}}, doc,
                             build_schema_index(doc), d, budget, caller, "task");
  EXPECT_EQ(out.result, RepairResult::Repaired);
  EXPECT_EQ(out.tier, RepairTier::Deterministic);
  EXPECT_EQ(out.charge, 1);
  EXPECT_EQ(budget.used(), 1);
  EXPECT_TRUE(caller.requests.empty());
  EXPECT_EQ(out.call->arguments, (Json{{"genre", "Comedy"}, {"year", "2000"}}));
}

// Error-recovery case: the API rejects a year range.
TEST(RepairOperator, ModelFixesYearFormat) {
  RepairBudget budget(5);
  FakeCaller caller(R"({"tool_calls":[{"name":"get_movies_by_year","arguments":{"genre":"Comedy","year":"2000"}}]})");
  auto doc = movies_doc();
  Diagnosis d;
  d.runtime_error =
      R"({"error": "Message error...", "response": "{'error': 'Invalid year format - year should be 4 digits.'}"})";
  auto out = repair_operator({doc.tool_id, Json{{"genre", "Comedy"}, {"year", "2000-2019"}}}, doc,
                             build_schema_index(doc), d, budget, caller, "task-1");
  ASSERT_EQ(out.result, RepairResult::Repaired);
  EXPECT_EQ(out.tier, RepairTier::Model);
  EXPECT_EQ(out.charge, 1);
  EXPECT_EQ(out.call->arguments.at("year"), "2000");
  ASSERT_EQ(caller.requests.size(), 1u);
  EXPECT_EQ(caller.requests[0].kind, "repair/get_movies_by_year");
  EXPECT_EQ(caller.requests[0].task_id, "task-1");
  const auto& text = caller.requests[0].prompt.messages.back().content;
  EXPECT_NE(text.find("year should be 4 digits"), std::string::npos);
  EXPECT_NE(text.find(R"({"genre":"Comedy","year":"2000-2019"})"), std::string::npos);
}

TEST(RepairOperator, ModelOutputIsRegated) {
  RepairBudget budget(5);
  FakeCaller caller(R"({"tool_calls":[{"name":"get_movies_by_year","arguments":{"genre":"Comedy"}}]})");
  auto doc = movies_doc();
  Diagnosis d;
  d.missing = {"year"};
  auto out = repair_operator({doc.tool_id, Json{{"genre", "Comedy"}}}, doc, build_schema_index(doc), d, budget, caller, "t");
  EXPECT_EQ(out.result, RepairResult::Unrepairable);
  EXPECT_EQ(out.charge, 1);
  EXPECT_NE(out.note.find("missing required field 'year'"), std::string::npos);
}

TEST(RepairOperator, CallerOutageAndProseAreTierTwoFailures) {
  auto doc = movies_doc();
  Diagnosis d;
  d.missing = {"year"};
  for (std::string reply : {std::string(), std::string("I fixed it: year=2000")}) {
    RepairBudget budget(5);
    FakeCaller caller(reply);
    auto out = repair_operator({doc.tool_id, Json{{"genre", "x"}}}, doc, build_schema_index(doc), d, budget, caller, "t");
    EXPECT_EQ(out.result, RepairResult::Unrepairable);
    EXPECT_FALSE(out.call);
  }
}

TEST(RepairBudget, ConcurrentChargesNeverExceedLimit) {
  for (int limit : {0, 1, 5, 17}) {
    RepairBudget budget(limit);
    std::atomic<int> granted{0};
    {
      std::vector<std::jthread> threads;
      for (int t = 0; t < 8; ++t)
        threads.emplace_back([&] {
          for (int i = 0; i < 50; ++i)
            if (budget.try_charge()) ++granted;
        });
    }
    EXPECT_EQ(granted.load(), limit);
    EXPECT_EQ(budget.used(), limit);
  }
  EXPECT_THROW(RepairBudget(-1), Error);
}

}  // namespace
}  // namespace layerflow
