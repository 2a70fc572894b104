#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "layerflow/http.hpp"
#include "layerflow/layerflow.hpp"

using namespace layerflow;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

ToolCatalog load_catalog(const std::string& path) { return parse_catalog(read_file(path)); }

std::string tasks_to_jsonl(std::span<const Task> tasks) {
  std::string out;
  for (const auto& t : tasks) out += task_to_json(t).dump() + "\n";
  return out;
}

std::pair<std::string, std::string> split_spec(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos) return {spec, ""};
  return {spec.substr(0, colon), spec.substr(colon + 1)};
}

// ---- synth ----

struct SynthArgs {
  int n = 2000;
  std::string depth = "1:4";
  std::uint64_t seed = 7;
  int layers = 5;
  int n_tasks = 50;
  std::string out = "data";
  bool suite = false;
  int suite_tasks = 200;
  double fault_rate = 0.0;
};

void run_synth(const SynthArgs& a) {
  fs::path out(a.out);
  fs::create_directories(out);
  if (a.suite) {
    sim::SuiteConfig cfg;
    cfg.n_tasks = a.suite_tasks;
    cfg.fault_rate = a.fault_rate;
    cfg.seed = a.seed;
    auto suite = sim::build_eval_suite(cfg);
    write_file(out / "catalog.json", serialize_catalog(suite.catalog));
    write_file(out / "tasks.jsonl", tasks_to_jsonl(suite.tasks));
    write_file(out / "sim_specs.json", sim::specs_to_json(suite.specs).dump(2));
    write_file(out / "script.json", sim::script_to_json(suite.script).dump(2));
    std::printf("suite: %zu tasks, %d of %d calls faulted across %d tasks -> %s\n", suite.tasks.size(),
                suite.faulted_calls, suite.total_calls, suite.faulted_tasks, out.c_str());
    return;
  }
  sim::SynthConfig cfg;
  cfg.n_examples = a.n;
  cfg.seed = a.seed;
  cfg.num_layers = a.layers;
  cfg.n_tasks = std::min(a.n_tasks, a.n);
  auto colon = a.depth.find(':');
  cfg.min_depth = std::stoi(a.depth.substr(0, colon));
  cfg.max_depth = colon == std::string::npos ? cfg.min_depth : std::stoi(a.depth.substr(colon + 1));
  auto ds = sim::generate_synthetic_dataset(cfg);
  std::string train;
  for (const auto& ex : ds.examples) train += training_example_to_json(ex).dump() + "\n";
  write_file(out / "train.jsonl", train);
  write_file(out / "catalog.json", serialize_catalog(ds.catalog));
  write_file(out / "tasks.jsonl", tasks_to_jsonl(ds.tasks));
  write_file(out / "sim_specs.json", sim::specs_to_json(ds.specs).dump(2));
  write_file(out / "script.json", sim::script_to_json(ds.script).dump(2));
  std::printf("synth: %zu examples, %zu runnable tasks, %zu tools -> %s\n", ds.examples.size(), ds.tasks.size(),
              ds.catalog.size(), out.c_str());
}

// ---- train / predict ----

struct EncoderArgs {
  std::string kind = "hashing";
  int dim = 768;
  std::uint64_t seed = 0;
  std::string store;

  Encoder make() const {
    auto k = parse_encoder_kind(kind);
    if (k == EncoderKind::Precomputed) {
      if (store.empty()) throw Error(ErrorCode::InvalidArgument, "--encoder precomputed needs --embedding-store");
      return Encoder::load_store(store, static_cast<std::size_t>(dim));
    }
    return Encoder::hashing(static_cast<std::size_t>(dim), seed);
  }
};

void add_encoder_options(CLI::App* cmd, EncoderArgs& e) {
  cmd->add_option("--encoder", e.kind, "hashing|precomputed")->check(CLI::IsMember({"hashing", "precomputed"}));
  cmd->add_option("--embedding-dim", e.dim, "Embedding dimension");
  cmd->add_option("--embedding-store", e.store, "Newline-delimited {text, vector} records");
  cmd->add_option("--encoder-seed", e.seed, "Seed of the hashing encoder");
}

struct TrainArgs {
  std::string data, catalog, out = "model.bin";
  int layers = 5, epochs = 10, model_dim = 256, heads = 8, blocks = 2;
  double lr = 1e-3, dropout = 0.1;
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  EncoderArgs encoder;
};

void run_train(const TrainArgs& a) {
  auto examples = load_training_file(a.data);
  auto catalog = load_catalog(a.catalog);
  auto encoder = a.encoder.make();
  TrainConfig cfg;
  cfg.hyper.input_dim = a.encoder.dim;
  cfg.hyper.model_dim = a.model_dim;
  cfg.hyper.heads = a.heads;
  cfg.hyper.blocks = a.blocks;
  cfg.hyper.num_layers = a.layers;
  cfg.hyper.dropout = a.dropout;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  cfg.batch_size = a.batch;
  cfg.encoder = {encoder.kind(), encoder.seed()};
  auto data = encode_examples(examples, catalog, encoder);
  auto result = train(data, cfg, [](const EpochStats& s) {
    std::printf("epoch %2d  loss %.5f  val exact %.4f\n", s.epoch + 1, s.train_loss, s.val_exact);
    std::fflush(stdout);
  });
  auto acc = evaluate_accuracy(result.model, data, result.split.test);
  std::printf("best epoch %d; test exact %.4f, within-one %.4f over %zu tools\n", result.best_epoch + 1, acc.exact,
              acc.within_one, acc.tools);
  save_model(result.model, a.out);
  std::printf("model -> %s\n", a.out.c_str());
}

Encoder encoder_for_model(const PredictorModel& model, const std::string& store) {
  if (model.encoder.kind == EncoderKind::Precomputed) {
    if (store.empty()) throw Error(ErrorCode::InvalidArgument, "model uses precomputed embeddings; pass --embedding-store");
    return Encoder::load_store(store, static_cast<std::size_t>(model.hyper.input_dim));
  }
  return encoder_for(model);
}

struct PredictArgs {
  std::string model, catalog, task, store;
};

void run_predict(const PredictArgs& a) {
  auto model = load_model(a.model);
  auto encoder = encoder_for_model(model, a.store);
  auto catalog = load_catalog(a.catalog);
  for (const auto& task : load_tasks(a.task)) {
    auto assignment = predict_layers(model, encoder, catalog.subset(task.tool_ids), task.query);
    Json out = assignment_to_json(assignment);
    out["task"] = task.id;
    std::cout << out.dump() << "\n";
  }
}

// ---- run ----

struct RunArgs {
  std::string catalog, model, tasks, caller, backend, out = "runs", store, cache_source;
  int layers = 5, budget = 5, step_cap = 10;
  bool parallel = false, flat = false, repair_empty = false;
  std::uint64_t seed = 0;
};

std::unique_ptr<Caller> make_caller(const std::string& spec) {
  auto [kind, arg] = split_spec(spec);
  if (kind == "scripted") return std::make_unique<sim::ScriptedCaller>(sim::load_script(arg));
  if (kind == "remote") return std::make_unique<RemoteCaller>(arg, http_transport());
  throw Error(ErrorCode::InvalidArgument, "unknown caller '" + spec + "'");
}

std::shared_ptr<ToolBackend> make_backend(const std::string& spec, std::uint64_t seed, const std::string& cache_source) {
  auto [kind, arg] = split_spec(spec);
  if (kind == "sim") return std::make_shared<sim::SimBackend>(sim::load_sim_specs(arg), seed);
  if (kind == "remote") return std::make_shared<RemoteBackend>(RemoteBackend::load_endpoints(arg), http_transport());
  if (kind == "cached") {
    std::shared_ptr<ToolBackend> inner;
    if (!cache_source.empty()) inner = make_backend(cache_source, seed, "");
    return std::make_shared<CachedBackend>(arg, inner);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown backend '" + spec + "'");
}

void run_run(const RunArgs& a) {
  auto catalog = load_catalog(a.catalog);
  auto tasks = load_tasks(a.tasks);
  auto caller = make_caller(a.caller);
  auto backend = make_backend(a.backend, a.seed, a.cache_source);
  std::optional<PredictorModel> model;
  std::optional<Encoder> encoder;
  if (!a.model.empty()) {
    model = load_model(a.model);
    encoder = encoder_for_model(*model, a.store);
  }
  ExecConfig cfg;
  cfg.num_layers = a.layers;
  cfg.budget = a.budget;
  cfg.parallel = a.parallel;
  cfg.repair_empty = a.repair_empty;
  cfg.step_cap = a.step_cap;

  std::vector<Trajectory> runs;
  for (const auto& task : tasks) {
    Trajectory t;
    if (a.flat) {
      t = flat_baseline_run(task, catalog, *caller, *backend, cfg);
    } else {
      LayerAssignment assignment;
      if (model) assignment = predict_layers(*model, *encoder, catalog.subset(task.tool_ids), task.query);
      else assignment = sim::gold_assignment(task, a.layers);
      t = run_trajectory(task, catalog, assignment, *caller, *backend, cfg);
    }
    write_trajectory(a.out, t);
    runs.push_back(std::move(t));
  }
  auto report = evaluate_run(runs, tasks);
  std::printf("%zu tasks, pass rate %.4f, mean steps %.2f, mean tokens %.1f -> %s\n", tasks.size(), report.pass_rate,
              report.mean_steps, report.mean_tokens, a.out.c_str());
}

// ---- eval / compare ----

struct EvalArgs {
  std::string runs, tasks, report, csv;
};

void run_eval(const EvalArgs& a) {
  auto tasks = load_tasks(a.tasks);
  auto trajectories = read_run_dir(a.runs);
  auto report = evaluate_run(trajectories, tasks);
  if (!a.report.empty()) write_file(a.report, report_to_json(report).dump(2) + "\n");
  if (!a.csv.empty()) write_file(a.csv, report_to_csv(report));
  std::printf("pass rate %.4f over %zu tasks, mean steps %.2f, mean tokens %.1f\n", report.pass_rate,
              report.rows.size(), report.mean_steps, report.mean_tokens);
}

struct CompareArgs {
  std::string a, b, tasks, name_a = "layered", name_b = "flat";
};

void run_compare(const CompareArgs& c) {
  auto load = [&](const std::string& dir) {
    auto trajectories = read_run_dir(dir);
    std::vector<Task> tasks;
    if (!c.tasks.empty()) {
      tasks = load_tasks(c.tasks);
    } else {
      // Without a task file only the counters matter; every run counts as a task.
      for (const auto& t : trajectories) tasks.push_back(Task{t.task_id, "-", {}, std::nullopt, {}, {}});
    }
    return evaluate_run(trajectories, tasks);
  };
  auto cmp = compare_runs(load(c.a), load(c.b));
  std::cout << format_comparison(cmp, c.name_a, c.name_b);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered tool-call planning and execution"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic training set, tasks and simulator specs");
  s->add_option("--n", synth.n, "Training examples");
  s->add_option("--depth", synth.depth, "Chain depth range lo:hi");
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--layers", synth.layers, "Layer count L");
  s->add_option("--tasks", synth.n_tasks, "Runnable tasks emitted with the training set");
  s->add_option("--out", synth.out, "Output directory");
  s->add_flag("--suite", synth.suite, "Emit the evaluation suite instead of a training set");
  s->add_option("--suite-tasks", synth.suite_tasks, "Evaluation suite size");
  s->add_option("--fault-rate", synth.fault_rate, "Fraction of suite calls carrying a repairable fault");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the layer predictor");
  t->add_option("--data", tr.data, "Training file (jsonl)")->required();
  t->add_option("--catalog", tr.catalog, "Tool catalog (json)")->required();
  t->add_option("--layers", tr.layers, "Layer count L");
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--seed", tr.seed, "Seed");
  t->add_option("--model-dim", tr.model_dim, "Hidden width");
  t->add_option("--heads", tr.heads, "Attention heads");
  t->add_option("--blocks", tr.blocks, "Encoder blocks");
  t->add_option("--dropout", tr.dropout, "Dropout rate");
  t->add_option("--batch", tr.batch, "Mini-batch size");
  t->add_option("--out", tr.out, "Model file");
  add_encoder_options(t, tr.encoder);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict layers for tasks");
  p->add_option("--model", pr.model, "Model file")->required();
  p->add_option("--catalog", pr.catalog, "Tool catalog")->required();
  p->add_option("--task", pr.task, "Task file (jsonl)")->required();
  p->add_option("--embedding-store", pr.store, "Embedding store for precomputed models");

  RunArgs ru;
  auto* r = app.add_subcommand("run", "Execute tasks layer by layer");
  r->add_option("--catalog", ru.catalog, "Tool catalog")->required();
  r->add_option("--model", ru.model, "Model file; gold layers from the task file when omitted");
  r->add_option("--tasks", ru.tasks, "Task file (jsonl)")->required();
  r->add_option("--caller", ru.caller, "scripted:<script.json> or remote:<url>")->required();
  r->add_option("--backend", ru.backend, "sim:<specs.json>, remote:<endpoints.json> or cached:<dir>")->required();
  r->add_option("--cache-source", ru.cache_source, "Backend consulted on cache misses");
  r->add_option("--layers", ru.layers, "Layer count L");
  r->add_option("--budget", ru.budget, "Repair budget per trajectory");
  r->add_option("--step-cap", ru.step_cap, "Turn cap of the flat baseline");
  r->add_flag("--parallel", ru.parallel, "Dispatch a layer's calls concurrently");
  r->add_flag("--flat", ru.flat, "Run the flat single-context baseline instead");
  r->add_flag("--repair-empty", ru.repair_empty, "Treat empty tool responses as repairable");
  r->add_option("--seed", ru.seed, "Simulator seed");
  r->add_option("--out", ru.out, "Trajectory directory");
  r->add_option("--embedding-store", ru.store, "Embedding store for precomputed models");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a run directory");
  e->add_option("--runs", ev.runs, "Trajectory directory")->required();
  e->add_option("--tasks", ev.tasks, "Task file (jsonl)")->required();
  e->add_option("--report", ev.report, "JSON report path");
  e->add_option("--csv", ev.csv, "CSV report path");

  CompareArgs cm;
  auto* c = app.add_subcommand("compare", "Token and step reduction of run a relative to run b");
  c->add_option("--a", cm.a, "First trajectory directory")->required();
  c->add_option("--b", cm.b, "Second trajectory directory")->required();
  c->add_option("--tasks", cm.tasks, "Task file (jsonl)");
  c->add_option("--name-a", cm.name_a, "Label of run a");
  c->add_option("--name-b", cm.name_b, "Label of run b");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) run_synth(synth);
    else if (*t) run_train(tr);
    else if (*p) run_predict(pr);
    else if (*r) run_run(ru);
    else if (*e) run_eval(ev);
    else if (*c) run_compare(cm);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
  return 0;
}
