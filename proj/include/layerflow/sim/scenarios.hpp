#pragma once

#include "layerflow/executor.hpp"
#include "layerflow/sim/env.hpp"

// Small hand-built scenarios with fixed tools, layers, simulated responses and
// caller scripts. Used by tests, the acceptance suite and the CLI demo.
namespace layerflow::sim {

struct Scenario {
  ToolCatalog catalog;
  Task task;
  LayerAssignment assignment;
  std::vector<SimToolSpec> specs;
  CallerScript script;
};

namespace detail {

inline ToolDoc scenario_tool(std::string id, std::string description, Json properties,
                             std::vector<std::string> required) {
  return {id, id, std::move(description),
          Json{{"type", "object"}, {"properties", std::move(properties)}, {"required", std::move(required)}},
          std::nullopt, Json::object()};
}

}  // namespace detail

/// Parcel tracking across three layers: a health check, a tracking lookup and a
/// courier reference query whose answer is "not found", then Finish.
inline Scenario parcel_tracking_scenario() {
  using detail::scenario_tool;
  const Json str{{"type", "string"}};
  std::vector<ToolDoc> docs{
      scenario_tool("get_tracking_data_for_create_container_tracking",
                    "Tracking events of a shipment container by its tracking id.", {{"is_id", str}}, {"is_id"}),
      scenario_tool("api_tracking_for_pack_send", "Courier status lookup by booking reference.",
                    {{"reference", str}}, {"reference"}),
      scenario_tool("health_for_suivi_colis", "Health check", Json::object(), {}),
      scenario_tool("latest_for_suivi_colis", "Latest status of a parcel.", {{"colisid", str}}, {"colisid"}),
      scenario_tool("all_for_suivi_colis", "Full status history of a parcel.", {{"colisid", str}}, {"colisid"}),
      scenario_tool("il_for_turkey_postal_codes", "Postal codes of a Turkish province.",
                    {{"il", {{"type", "integer"}}}}, {"il"}),
      scenario_tool("parse_for_gs1parser", "Parses a GS1 barcode string.", {{"q", str}}, {"q"}),
  };
  Scenario s;
  s.catalog = ToolCatalog(docs);
  s.task.id = "parcel-1";
  s.task.query =
      "Track my gift parcel with tracking id 6045e2f44e1b233199a5e77a and report its status, look up courier "
      "reference 'ReferenceNumberHere', and tell me whether the suivi-colis service is healthy.";
  for (const auto& d : docs) s.task.tool_ids.push_back(d.tool_id);
  s.task.gold_layers = {1, 2, 0, 1, 1, 0, 2};
  s.task.facts = {"booked", "pending", "could not be found"};
  s.assignment = make_assignment(s.task.tool_ids, s.task.gold_layers, 5);

  s.specs = {
      {"health_for_suivi_colis", Behavior::Ok, R"({"status":"UP","checks":[]})", "", FieldType::String, 0, 0, 0},
      {"get_tracking_data_for_create_container_tracking", Behavior::Ok,
       R"({"status":"success","data":{"events":[{"status":"booked","location":"Nairobi","region":"Eldoret","country":"Kenya"},{"status":"pending","region":"Nairobi"}]}})",
       "", FieldType::String, 0, 0, 0},
      {"api_tracking_for_pack_send", Behavior::Ok, R"({"status":"failed","message":"Tracking information not found"})",
       "", FieldType::String, 0, 0, 0},
      {"latest_for_suivi_colis", Behavior::Ok, R"({"status":"unknown parcel"})", "", FieldType::String, 0, 0, 0},
      {"all_for_suivi_colis", Behavior::Ok, R"({"events":[]})", "", FieldType::String, 0, 0, 0},
      {"il_for_turkey_postal_codes", Behavior::Ok, R"({"codes":[]})", "", FieldType::String, 0, 0, 0},
      {"parse_for_gs1parser", Behavior::Ok, R"({"fields":[]})", "", FieldType::String, 0, 0, 0},
  };

  auto& r = s.script.responses[s.task.id];
  r["layer"] = {
      "Thought: check the service first.\nAction: health_for_suivi_colis\nAction Input: {}",
      "Thought: fetch the tracking events.\nAction: get_tracking_data_for_create_container_tracking\n"
      "Action Input: {\"is_id\": \"6045e2f44e1b233199a5e77a\"}",
      "Thought: query the courier reference.\nAction: api_tracking_for_pack_send\n"
      "Action Input: {\"reference\": \"ReferenceNumberHere\"}",
  };
  r["finish"] = {
      "Action: Finish\nAction Input: {\"return_type\": \"give_answer\", \"final_answer\": \"Your parcel was booked "
      "in Eldoret, Kenya and is now pending in Nairobi. The courier reference could not be found. The suivi-colis "
      "service reports UP.\"}"};
  return s;
}

/// Two-layer job search: the search tool yields an offer url that the detail
/// tool consumes in the next layer.
inline Scenario job_search_scenario() {
  using detail::scenario_tool;
  const Json str{{"type", "string"}};
  std::vector<ToolDoc> docs{
      scenario_tool("offerinfo_for_google_jobs", "Details of one job offer given its url.", {{"joburl", str}},
                    {"joburl"}),
      scenario_tool("searchoffers_for_google_jobs", "Searches job offers by keyword and location; returns a joburl.",
                    {{"keyword", str}, {"location", str}}, {"keyword"}),
  };
  Scenario s;
  s.catalog = ToolCatalog(docs);
  s.task.id = "jobs-1";
  s.task.query = "List secretary job offers in Frankfurt and give me the details of one of them.";
  s.task.tool_ids = {"offerinfo_for_google_jobs", "searchoffers_for_google_jobs"};
  s.task.gold_layers = {1, 0};
  s.assignment = make_assignment(s.task.tool_ids, s.task.gold_layers, 5);
  s.specs = {
      {"searchoffers_for_google_jobs", Behavior::Ok,
       R"({"joburl":"https://jobs.example/{{hash:offer}}","title":"Secretary","location":"{{arg:location}}"})", "",
       FieldType::String, 0, 0, 0},
      {"offerinfo_for_google_jobs", Behavior::Ok,
       R"({"joburl":"{{arg:joburl}}","company":"Main Office GmbH","salary":"3200 EUR"})", "", FieldType::String, 0,
       0, 0},
  };
  auto& r = s.script.responses[s.task.id];
  r["layer"] = {
      "Action: searchoffers_for_google_jobs\nAction Input: {\"keyword\": \"secretary\", \"location\": \"Frankfurt\"}",
      "Action: offerinfo_for_google_jobs\nAction Input: {\"joburl\": \"{{from:searchoffers_for_google_jobs:joburl}}\"}",
  };
  r["finish"] = {
      "Action: Finish\nAction Input: {\"return_type\": \"give_answer\", \"final_answer\": \"Offer "
      "{{from:offerinfo_for_google_jobs:joburl}} at {{from:offerinfo_for_google_jobs:company}}.\"}"};
  s.task.facts = {"Main Office GmbH", "https://jobs.example/"};
  return s;
}

/// A caller output that runs past its first call and invents later turns,
/// including fake user turns and tool results.
inline constexpr std::string_view kCollapsedTranscript =
    "Thought: I should start with the container tracking lookup.\n"
    "Action: get_tracking_data_for_create_container_tracking\n"
    "Action Input: {\"is_id\": \"6045e2f44e1b233199a5e77a\"}Human: continue\n"
    "Thought: next the courier.\n"
    "Action: api_tracking_for_pack_send\n"
    "Action Input: {\"reference\": \"ReferenceNumberHere\"}\n"
    "Human: continue\n"
    "Observation: {\"status\": \"delivered\"}\n"
    "Thought: everything is known now.\n"
    "Action: Finish\n"
    "Action Input: {\"return_type\": \"give_answer\", \"final_answer\": \"Delivered, on its way, healthy.\"}\n"
    "Human: thanks\n";

}  // namespace layerflow::sim
