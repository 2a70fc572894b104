#pragma once

#include <array>
#include <numeric>

#include "layerflow/executor.hpp"
#include "layerflow/predictor/train.hpp"
#include "layerflow/sim/env.hpp"

namespace layerflow::sim {

// ---- vocabulary ----

struct Domain {
  std::string_view api;      // catalog suffix, e.g. "weather_hub"
  std::string_view entity;   // e.g. "station"
  std::string_view subject;  // how queries refer to the domain
};

inline constexpr std::array<Domain, 16> kDomains{{
    {"weather_hub", "station", "weather"},
    {"sky_flights", "route", "flights"},
    {"movie_db", "title", "movies"},
    {"google_jobs", "offer", "jobs"},
    {"parcel_track", "shipment", "parcels"},
    {"recipe_box", "dish", "recipes"},
    {"stock_feed", "ticker", "stocks"},
    {"hotel_finder", "property", "hotels"},
    {"music_index", "track", "music"},
    {"news_wire", "article", "news"},
    {"sports_live", "match", "sports"},
    {"book_shelf", "edition", "books"},
    {"coin_market", "coin", "crypto"},
    {"home_listings", "listing", "real estate"},
    {"event_guide", "venue", "events"},
    {"transit_map", "stop", "transit"},
}};

inline constexpr int kStages = 5;
inline constexpr int kVariants = 3;

// Verb synonyms per chain stage; the stage is the gold layer.
inline constexpr std::array<std::array<std::string_view, 4>, kStages> kStageVerbs{{
    {"search", "find", "lookup", "discover"},
    {"fetch", "get", "retrieve", "load"},
    {"aggregate", "summarize", "combine", "rank"},
    {"report", "export", "compile", "render"},
    {"archive", "deliver", "notify", "store"},
}};

inline constexpr std::array<std::string_view, kStages> kStageOutputs{"id", "record_id", "stats_id", "report_id",
                                                                   "archive_id"};

inline constexpr std::array<std::string_view, 8> kDistractorVerbs{"health", "ping",  "status",    "version",
                                                                  "quota",  "usage", "languages", "regions"};

inline constexpr std::array<std::string_view, 5> kGoals{"Find", "Get details on", "Summarize", "Write a report on",
                                                        "Archive a report on"};

inline constexpr std::array<std::string_view, 24> kTopics{
    "berlin",  "tokyo",   "summer",  "winter",   "budget",  "premium", "family",   "students",
    "nairobi", "lagos",   "seattle", "madrid",   "weekend", "holiday", "vintage",  "modern",
    "organic", "express", "classic", "trending", "nearby",  "popular", "discount", "archive"};

inline std::string output_key(const Domain& d, int stage) {
  return std::string(d.entity) + "_" + std::string(kStageOutputs[static_cast<std::size_t>(stage)]);
}

/// Required key of a chain tool: the query text at stage 0, else the previous stage's output.
inline std::string input_key(const Domain& d, int stage) { return stage == 0 ? "query" : output_key(d, stage - 1); }

struct Vocabulary {
  ToolCatalog catalog;
  // chain[domain][stage] holds kVariants tool ids
  std::vector<std::array<std::vector<std::string>, kStages>> chain;
  std::vector<std::vector<std::string>> distractors;  // per domain
  std::vector<SimToolSpec> specs;
};

inline std::string capitalized(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

inline std::string stage_description(const Domain& d, int stage) {
  std::string e(d.entity);
  switch (stage) {
    case 0: return "Search " + std::string(d.subject) + " " + e + "s matching free text and return " + e + " ids.";
    case 1: return "Return the full " + e + " record for a " + e + "_id obtained from a search.";
    case 2: return "Combine " + e + " records into statistics; needs a " + e + "_record_id from a fetch.";
    case 3: return "Produce the final " + e + " report from a " + e + "_stats_id.";
    default: return "Store a finished " + e + " report given its " + e + "_report_id.";
  }
}

inline Json chain_parameters(const Domain& d, int stage) {
  Json props{{input_key(d, stage), {{"type", "string"}}},
             {"limit", {{"type", "integer"}}},
             {"sort", {{"type", "string"}, {"enum", {"relevance", "recent"}}}},
             {"verbose", {{"type", "boolean"}}}};
  return Json{{"type", "object"}, {"properties", props}, {"required", {input_key(d, stage)}}};
}

/// Deterministic tool universe shared by training data and evaluation suites.
inline Vocabulary synthetic_vocabulary(std::uint64_t vocab_seed = 7) {
  Rng rng(mix_key({vocab_seed, 0x766F6361ULL}));
  Vocabulary v;
  std::vector<ToolDoc> docs;
  for (const auto& d : kDomains) {
    std::array<std::vector<std::string>, kStages> stages;
    for (int s = 0; s < kStages; ++s) {
      std::vector<std::string_view> verbs(kStageVerbs[static_cast<std::size_t>(s)].begin(),
                                          kStageVerbs[static_cast<std::size_t>(s)].end());
      rng.shuffle(verbs);
      for (int k = 0; k < kVariants; ++k) {
        std::string id = std::string(verbs[static_cast<std::size_t>(k)]) + "_" + std::string(d.entity) + "_for_" +
                         std::string(d.api);
        ToolDoc doc{id, id, stage_description(d, s), chain_parameters(d, s), output_key(d, s), Json::object()};
        docs.push_back(doc);
        stages[static_cast<std::size_t>(s)].push_back(id);
        v.specs.push_back({id, Behavior::UnexpectedKwargError,
                           "{\"" + output_key(d, s) + "\":\"" + std::string(d.entity.substr(0, 3)) +
                               "-{{hash:id}}\",\"fact\":\"" + std::string(verbs[static_cast<std::size_t>(k)]) +
                               "-{{hash:fact}}\",\"input\":\"{{arg:" + input_key(d, s) + "}}\"}",
                           "verbose", FieldType::String, 0.0, 0, 0});
      }
    }
    std::vector<std::string> extra;
    for (auto verb : kDistractorVerbs) {
      std::string id = std::string(verb) + "_for_" + std::string(d.api);
      docs.push_back({id, id, capitalized(verb) + " endpoint of the " + std::string(d.subject) + " API; takes no input.",
                      Json{{"type", "object"}, {"properties", Json::object()}}, std::string(d.api) + "_" + std::string(verb),
                      Json::object()});
      extra.push_back(id);
      v.specs.push_back({id, Behavior::Ok, "{\"status\":\"UP\",\"checks\":[]}", "", FieldType::String, 0.0, 0, 0});
    }
    v.chain.push_back(std::move(stages));
    v.distractors.push_back(std::move(extra));
  }
  v.catalog = ToolCatalog(std::move(docs));
  return v;
}

// ---- task plans and scripts ----

enum class Fault { None, StringInteger, EnumCase, MissingRequired, UnexpectedKwarg };

inline std::string_view to_string(Fault f) {
  switch (f) {
    case Fault::None: return "none";
    case Fault::StringInteger: return "string_integer";
    case Fault::EnumCase: return "enum_case";
    case Fault::MissingRequired: return "missing_required";
    case Fault::UnexpectedKwarg: return "unexpected_kwarg";
  }
  return "?";
}

struct PlannedCall {
  std::string tool_id;
  int limit = 5;
  std::string sort = "relevance";
  Fault fault = Fault::None;
};

/// A task before scripting: chain calls grouped by gold layer, plus distractors.
struct TaskPlan {
  std::string id;
  std::size_t domain = 0;
  std::string topic;
  std::vector<std::vector<PlannedCall>> layers;
  std::vector<std::string> distractors;
  std::vector<std::string> tool_order;  // presentation order of the task's tools
};

inline std::string plan_query(const TaskPlan& p) {
  const auto& d = kDomains[p.domain];
  return std::string(kGoals[std::min<std::size_t>(p.layers.size(), kGoals.size()) - 1]) + " " + p.topic + " " +
         std::string(d.subject) + " " + std::string(d.entity) + "s";
}

struct ScriptedTask {
  Task task;
  std::map<std::string, std::vector<std::string>> responses;  // kind -> responses
  int faults = 0;
};

inline std::string action_text(const std::string& tool, const Json& args) {
  return "Action: " + tool + "\nAction Input: " + args.dump();
}

/// Builds the task record (facts from a clean simulated run) and the layered
/// and flat scripts, with faults applied to the scripted arguments.
inline ScriptedTask materialize(const TaskPlan& plan, const Vocabulary& vocab) {
  const auto& domain = kDomains[plan.domain];
  std::map<std::string, SimToolSpec> specs;
  for (const auto& s : vocab.specs) specs.emplace(s.tool_id, s);

  ScriptedTask out;
  out.task.id = plan.id;
  out.task.query = plan_query(plan);
  out.task.tool_ids = plan.tool_order;
  std::map<std::string, int> layer_of;
  for (std::size_t k = 0; k < plan.layers.size(); ++k)
    for (const auto& c : plan.layers[k]) layer_of[c.tool_id] = static_cast<int>(k);
  for (const auto& id : plan.tool_order) out.task.gold_layers.push_back(layer_of.contains(id) ? layer_of[id] : 0);

  std::map<std::string, Json> clean_bodies;
  std::vector<std::string> layer_responses, flat_responses;
  std::string answer = "Results for " + plan.topic + ":";
  for (std::size_t k = 0; k < plan.layers.size(); ++k) {
    std::vector<std::string> actions;
    const std::string key = input_key(domain, static_cast<int>(k));
    for (const auto& call : plan.layers[k]) {
      Json scripted{{"limit", call.limit}, {"sort", call.sort}};
      Json clean = scripted;
      if (k == 0) {
        scripted[key] = plan.topic + " " + std::string(domain.subject);
        clean[key] = scripted[key];
      } else {
        const auto& producer = plan.layers[k - 1].front().tool_id;
        scripted[key] = "{{from:" + producer + ":" + key + "}}";
        clean[key] = clean_bodies.at(producer).at(key);
      }
      switch (call.fault) {
        case Fault::None: break;
        case Fault::StringInteger: scripted["limit"] = std::to_string(call.limit); break;
        case Fault::EnumCase: scripted["sort"] = capitalized(call.sort); break;
        case Fault::MissingRequired: {
          scripted.erase(key);
          Json envelope{{"tool_calls", {{{"name", call.tool_id}, {"arguments", clean}}}}};
          out.responses["repair/" + call.tool_id].push_back(envelope.dump());
          break;
        }
        case Fault::UnexpectedKwarg: scripted["verbose"] = true; break;
      }
      if (call.fault != Fault::None) ++out.faults;
      auto body = simulated_invoke(specs.at(call.tool_id), clean, {plan.id, static_cast<int>(k), 0, 0}).body;
      clean_bodies[call.tool_id] = Json::parse(body);
      out.task.facts.push_back(clean_bodies[call.tool_id].at("fact").get<std::string>());
      actions.push_back(action_text(call.tool_id, scripted));
      flat_responses.push_back(actions.back());
      answer += " " + call.tool_id + " gave {{from:" + call.tool_id + ":fact}};";
    }
    std::string joined;
    for (const auto& a : actions) joined += (joined.empty() ? "" : "\n") + a;
    layer_responses.push_back(joined);
  }
  std::string finish =
      "Action: Finish\nAction Input: " + Json{{"return_type", "give_answer"}, {"final_answer", answer}}.dump();
  out.responses["layer"] = std::move(layer_responses);
  out.responses["finish"] = {finish};
  flat_responses.push_back(finish);
  out.responses["flat"] = std::move(flat_responses);
  return out;
}

// ---- training data ----

struct SynthConfig {
  int n_examples = 2000;
  int min_depth = 1;
  int max_depth = 4;
  std::uint64_t seed = 7;
  std::uint64_t vocab_seed = 7;
  int min_distractors = 1;
  int max_distractors = 2;
  int num_layers = 5;
  int n_tasks = 50;  // runnable tasks emitted alongside the training file

  void validate() const {
    if (n_examples < 0 || n_tasks < 0) throw Error(ErrorCode::InvalidArgument, "negative example count");
    if (min_depth < 1 || min_depth > max_depth) throw Error(ErrorCode::InvalidArgument, "bad depth range");
    if (max_depth > num_layers) throw Error(ErrorCode::InvalidArgument, "depth range exceeds the layer count");
    if (max_depth > kStages) throw Error(ErrorCode::InvalidArgument, "depth above the generator's chain length");
    if (min_distractors < 0 || min_distractors > max_distractors || max_distractors > 8)
      throw Error(ErrorCode::InvalidArgument, "bad distractor range");
  }
};

// Depth mix; keeps the deepest layer of a 1..4 range above 5% of tool labels.
inline constexpr std::array<double, kStages> kDepthWeights{0.15, 0.25, 0.30, 0.30, 0.20};

struct SynthDataset {
  ToolCatalog catalog;
  std::vector<TrainingExample> examples;
  std::vector<Task> tasks;
  std::vector<SimToolSpec> specs;
  CallerScript script;
};

namespace detail {

inline int draw_depth(Rng& rng, int lo, int hi) {
  double total = 0;
  for (int d = lo; d <= hi; ++d) total += kDepthWeights[static_cast<std::size_t>(d - 1)];
  double u = rng.uniform() * total;
  for (int d = lo; d <= hi; ++d) {
    u -= kDepthWeights[static_cast<std::size_t>(d - 1)];
    if (u < 0) return d;
  }
  return hi;
}

inline std::vector<std::string> draw_distractors(Rng& rng, const Vocabulary& v, std::size_t domain, int count) {
  std::vector<std::string> pool;
  for (std::size_t d = 0; d < v.distractors.size(); ++d)
    if (d != domain)
      for (const auto& id : v.distractors[d]) pool.push_back(id);
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

inline PlannedCall draw_call(Rng& rng, std::string id) {
  PlannedCall c;
  c.tool_id = std::move(id);
  c.limit = rng.between(1, 20);
  c.sort = rng.bernoulli(0.5) ? "relevance" : "recent";
  return c;
}

inline std::string task_id(std::string_view prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*s-%04d", static_cast<int>(prefix.size()), prefix.data(), i);
  return buf;
}

}  // namespace detail

/// Layer-labelled examples: a dependency chain of random depth (one tool per
/// stage) plus distractor tools from other domains at layer 0.
inline SynthDataset generate_synthetic_dataset(const SynthConfig& cfg) {
  cfg.validate();
  auto vocab = synthetic_vocabulary(cfg.vocab_seed);
  SynthDataset out{vocab.catalog, {}, {}, vocab.specs, {}};
  Rng rng(mix_key({cfg.seed, 0x73796E74ULL}));
  for (int i = 0; i < cfg.n_examples; ++i) {
    TaskPlan plan;
    plan.id = detail::task_id("syn", i);
    plan.domain = rng.below(kDomains.size());
    plan.topic = std::string(kTopics[rng.below(kTopics.size())]);
    int depth = detail::draw_depth(rng, cfg.min_depth, cfg.max_depth);
    for (int s = 0; s < depth; ++s) {
      const auto& variants = vocab.chain[plan.domain][static_cast<std::size_t>(s)];
      plan.layers.push_back({detail::draw_call(rng, variants[rng.below(variants.size())])});
    }
    plan.distractors = detail::draw_distractors(rng, vocab, plan.domain, rng.between(cfg.min_distractors, cfg.max_distractors));
    for (const auto& layer : plan.layers) plan.tool_order.push_back(layer.front().tool_id);
    for (const auto& d : plan.distractors) plan.tool_order.push_back(d);
    rng.shuffle(plan.tool_order);

    auto scripted = materialize(plan, vocab);
    out.examples.push_back({scripted.task.query, scripted.task.tool_ids, scripted.task.gold_layers});
    if (i < cfg.n_tasks) {
      out.script.responses[plan.id] = scripted.responses;
      out.tasks.push_back(std::move(scripted.task));
    }
  }
  return out;
}

// ---- evaluation suite ----

struct SuiteConfig {
  int n_tasks = 200;
  int tools_per_task = 10;
  int min_depth = 2;
  int max_depth = 4;
  int max_width = 3;
  int max_chain_calls = 9;  // one flat turn per call plus Finish stays within the step cap of 10
  double fault_rate = 0.0;
  int max_faults_per_task = 5;
  std::uint64_t seed = 11;
  std::uint64_t vocab_seed = 7;
};

struct Suite {
  ToolCatalog catalog;
  std::vector<Task> tasks;
  std::vector<SimToolSpec> specs;
  CallerScript script;
  std::vector<TaskPlan> plans;
  int total_calls = 0;
  int faulted_calls = 0;
  int faulted_tasks = 0;
};

/// Tasks with `tools_per_task` candidates, 2-4 gold layers and 1-3 calls per
/// layer; exactly round(fault_rate * calls) scripted calls carry a repairable fault.
inline Suite build_eval_suite(const SuiteConfig& cfg) {
  if (cfg.min_depth < 1 || cfg.max_depth > kStages || cfg.min_depth > cfg.max_depth)
    throw Error(ErrorCode::InvalidArgument, "bad suite depth range");
  if (cfg.max_width < 1 || cfg.max_width > kVariants) throw Error(ErrorCode::InvalidArgument, "bad suite width");
  if (cfg.max_chain_calls < cfg.max_depth || cfg.max_chain_calls >= cfg.tools_per_task)
    throw Error(ErrorCode::InvalidArgument, "chain calls must fit the task's tool count");
  auto vocab = synthetic_vocabulary(cfg.vocab_seed);
  Suite suite{vocab.catalog, {}, vocab.specs, {}, {}, 0, 0, 0};
  Rng rng(mix_key({cfg.seed, 0x7375697465ULL}));

  for (int i = 0; i < cfg.n_tasks; ++i) {
    TaskPlan plan;
    plan.id = detail::task_id("eval", i);
    plan.domain = rng.below(kDomains.size());
    plan.topic = std::string(kTopics[rng.below(kTopics.size())]);
    int depth = rng.between(cfg.min_depth, cfg.max_depth);
    int budget = cfg.max_chain_calls;
    for (int s = 0; s < depth; ++s) {
      int remaining_layers = depth - s - 1;
      int width = std::min(rng.between(1, cfg.max_width), budget - remaining_layers);
      budget -= width;
      auto variants = vocab.chain[plan.domain][static_cast<std::size_t>(s)];
      rng.shuffle(variants);
      std::vector<PlannedCall> layer;
      for (int w = 0; w < width; ++w) layer.push_back(detail::draw_call(rng, variants[static_cast<std::size_t>(w)]));
      plan.layers.push_back(std::move(layer));
    }
    int chain_tools = cfg.max_chain_calls - budget;
    plan.distractors = detail::draw_distractors(rng, vocab, plan.domain, cfg.tools_per_task - chain_tools);
    for (const auto& layer : plan.layers)
      for (const auto& c : layer) plan.tool_order.push_back(c.tool_id);
    for (const auto& d : plan.distractors) plan.tool_order.push_back(d);
    rng.shuffle(plan.tool_order);
    suite.total_calls += chain_tools;
    suite.plans.push_back(std::move(plan));
  }

  // Fault placement: a seeded shuffle of every scripted call, capped per task.
  struct Slot {
    std::size_t task, layer, call;
  };
  std::vector<Slot> slots;
  for (std::size_t t = 0; t < suite.plans.size(); ++t)
    for (std::size_t k = 0; k < suite.plans[t].layers.size(); ++k)
      for (std::size_t c = 0; c < suite.plans[t].layers[k].size(); ++c) slots.push_back({t, k, c});
  Rng fault_rng(mix_key({cfg.seed, 0x6661756C74ULL}));
  fault_rng.shuffle(slots);
  const int target = static_cast<int>(std::lround(cfg.fault_rate * suite.total_calls));
  std::vector<int> per_task(suite.plans.size(), 0);
  constexpr std::array<Fault, 4> kinds{Fault::StringInteger, Fault::EnumCase, Fault::MissingRequired,
                                       Fault::UnexpectedKwarg};
  for (const auto& s : slots) {
    if (suite.faulted_calls >= target) break;
    if (per_task[s.task] >= cfg.max_faults_per_task) continue;
    suite.plans[s.task].layers[s.layer][s.call].fault = kinds[static_cast<std::size_t>(suite.faulted_calls) % kinds.size()];
    ++per_task[s.task];
    ++suite.faulted_calls;
  }
  for (int n : per_task) suite.faulted_tasks += n > 0 ? 1 : 0;

  for (const auto& plan : suite.plans) {
    auto scripted = materialize(plan, vocab);
    suite.script.responses[plan.id] = std::move(scripted.responses);
    suite.tasks.push_back(std::move(scripted.task));
  }
  return suite;
}

/// Gold layers of a task as an assignment.
inline LayerAssignment gold_assignment(const Task& task, int num_layers) {
  if (task.gold_layers.size() != task.tool_ids.size())
    throw Error(ErrorCode::InvalidArgument, "task " + task.id + " carries no gold layers");
  return make_assignment(task.tool_ids, task.gold_layers, num_layers);
}

}  // namespace layerflow::sim
