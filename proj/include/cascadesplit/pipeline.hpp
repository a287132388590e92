#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cascadesplit/cascade.hpp"
#include "cascadesplit/dataset.hpp"
#include "cascadesplit/decision.hpp"
#include "cascadesplit/errors.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/model_io.hpp"
#include "cascadesplit/nas.hpp"
#include "cascadesplit/replay.hpp"
#include "cascadesplit/textio.hpp"
#include "cascadesplit/two_exit.hpp"

// Run configuration and the stages of the end-to-end workflow: synthetic
// data, server/teacher training, distilled architecture search for the
// client, early-exit attachment, decision units, logit replays and sweeps.
// Every stage reads and writes artifacts inside one run directory.

namespace cascadesplit {

struct ModelBudget {
  std::vector<std::size_t> hidden;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
};

struct RunConfig {
  std::uint64_t seed = 7;

  // data
  std::size_t classes = 4;
  std::vector<std::size_t> samples_per_class{1000, 1000, 1000, 1000};
  std::size_t input_dim = 4;
  double separation = 3.0;
  std::size_t clusters_per_class = 4;
  SplitFractions split;

  ModelBudget teacher{{64, 64}, 60, 32, 0.05};
  /// Seed architecture of the search and the budget of the final from-scratch
  /// retraining of the winner.
  ModelBudget client{{6}, 2, 32, 0.05};

  std::size_t nas_steps = 5;
  std::size_t nas_candidates = 8;
  std::size_t nas_epochs = 5;
  double nas_temperature = 20.0;
  double nas_learning_rate = 0.05;

  std::optional<std::size_t> exit_node;
  std::size_t exit_epochs = 2;
  double exit_learning_rate = 0.05;
  bool exit_finetune_backbone = false;

  DuTrainConfig du{16, 60, 32, 0.05, 0};
  bool du_exit2_filtered = false;

  double s1 = 0.5;
  double s2 = 0.5;
  CostModel costs;
  FallbackPolicy fallback = FallbackPolicy::UseLocalPrediction;
  std::size_t timeout_ms = 1000;
  std::size_t grid_intervals = 10;

  std::string address = "127.0.0.1:7878";

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.classes = classes;
    s.samples_per_class = samples_per_class;
    s.input_dim = input_dim;
    s.separation = separation;
    s.clusters_per_class = clusters_per_class;
    s.seed = stage_seed(1);
    return s;
  }

  /// Independent, reproducible seed for each pipeline stage.
  std::uint64_t stage_seed(std::uint64_t stage) const { return detail::mix_seed(seed, stage, 0x5eed); }
};

namespace detail {

// Reads keys of one JSON object and rejects any key that was not consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + where_ + "." + item.key() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_budget(const nlohmann::json* j, const char* where, ModelBudget& b) {
  if (!j) return;
  ObjectReader r(*j, where);
  r.read("hidden", b.hidden);
  r.read("epochs", b.epochs);
  r.read("batch_size", b.batch_size);
  r.read("learning_rate", b.learning_rate);
  r.finish();
}

inline nlohmann::json budget_json(const ModelBudget& b) {
  return {{"hidden", b.hidden}, {"epochs", b.epochs}, {"batch_size", b.batch_size}, {"learning_rate", b.learning_rate}};
}

}  // namespace detail

/// Overlays a JSON config document onto `cfg`. Unknown keys are rejected.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  detail::ObjectReader root(j, "config");
  root.read("seed", cfg.seed);
  if (const auto* d = root.child("data")) {
    detail::ObjectReader r(*d, "data");
    r.read("classes", cfg.classes);
    r.read("samples_per_class", cfg.samples_per_class);
    r.read("input_dim", cfg.input_dim);
    r.read("separation", cfg.separation);
    r.read("clusters_per_class", cfg.clusters_per_class);
    r.finish();
  }
  if (const auto* s = root.child("split")) {
    detail::ObjectReader r(*s, "split");
    r.read("train", cfg.split.train);
    r.read("validation", cfg.split.validation);
    r.read("test", cfg.split.test);
    r.finish();
  }
  detail::read_budget(root.child("teacher"), "teacher", cfg.teacher);
  detail::read_budget(root.child("client"), "client", cfg.client);
  if (const auto* n = root.child("nas")) {
    detail::ObjectReader r(*n, "nas");
    r.read("steps", cfg.nas_steps);
    r.read("candidates", cfg.nas_candidates);
    r.read("epochs_per_candidate", cfg.nas_epochs);
    r.read("temperature", cfg.nas_temperature);
    r.read("learning_rate", cfg.nas_learning_rate);
    r.finish();
  }
  if (const auto* e = root.child("exits")) {
    detail::ObjectReader r(*e, "exits");
    std::optional<std::size_t> node;
    if (const auto* p = r.child("node"); p && !p->is_null()) {
      try {
        node = p->get<std::size_t>();
      } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("exits.node: ") + ex.what());
      }
    }
    cfg.exit_node = node;
    r.read("epochs", cfg.exit_epochs);
    r.read("learning_rate", cfg.exit_learning_rate);
    r.read("finetune_backbone", cfg.exit_finetune_backbone);
    r.finish();
  }
  if (const auto* d = root.child("du")) {
    detail::ObjectReader r(*d, "du");
    r.read("hidden_width", cfg.du.hidden_width);
    r.read("epochs", cfg.du.epochs);
    r.read("batch_size", cfg.du.batch_size);
    r.read("learning_rate", cfg.du.learning_rate);
    r.read("exit2_filtered", cfg.du_exit2_filtered);
    r.finish();
  }
  if (const auto* c = root.child("cascade")) {
    detail::ObjectReader r(*c, "cascade");
    r.read("s1", cfg.s1);
    r.read("s2", cfg.s2);
    r.read("cost_exit1", cfg.costs.exit1);
    r.read("cost_exit2", cfg.costs.exit2);
    r.read("cost_communication", cfg.costs.communication);
    std::string fallback = cfg.fallback == FallbackPolicy::FailSample ? "fail_sample" : "use_local";
    r.read("fallback", fallback);
    if (fallback == "fail_sample") cfg.fallback = FallbackPolicy::FailSample;
    else if (fallback == "use_local") cfg.fallback = FallbackPolicy::UseLocalPrediction;
    else throw ConfigError("cascade.fallback must be 'use_local' or 'fail_sample'");
    r.read("timeout_ms", cfg.timeout_ms);
    r.read("grid_intervals", cfg.grid_intervals);
    r.finish();
  }
  if (const auto* s = root.child("server")) {
    detail::ObjectReader r(*s, "server");
    r.read("address", cfg.address);
    r.finish();
  }
  root.finish();
}

inline void validate_config(const RunConfig& cfg) {
  if (cfg.samples_per_class.size() != cfg.classes)
    throw ConfigError("data.samples_per_class must list one count per class");
  if (cfg.client.hidden.empty()) throw ConfigError("client.hidden needs at least one hidden layer");
  if (!(cfg.s1 >= 0.0 && cfg.s1 <= 1.0) || !(cfg.s2 >= 0.0 && cfg.s2 <= 1.0))
    throw ConfigError("sensitivities must lie in [0,1]");
  if (cfg.grid_intervals == 0) throw ConfigError("cascade.grid_intervals must be positive");
  if (!(cfg.nas_temperature > 0.0)) throw ConfigError("nas.temperature must be positive");
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["data"] = {{"classes", cfg.classes},
               {"samples_per_class", cfg.samples_per_class},
               {"input_dim", cfg.input_dim},
               {"separation", cfg.separation},
               {"clusters_per_class", cfg.clusters_per_class}};
  j["split"] = {{"train", cfg.split.train}, {"validation", cfg.split.validation}, {"test", cfg.split.test}};
  j["teacher"] = detail::budget_json(cfg.teacher);
  j["client"] = detail::budget_json(cfg.client);
  j["nas"] = {{"steps", cfg.nas_steps},
              {"candidates", cfg.nas_candidates},
              {"epochs_per_candidate", cfg.nas_epochs},
              {"temperature", cfg.nas_temperature},
              {"learning_rate", cfg.nas_learning_rate}};
  j["exits"] = {{"node", cfg.exit_node ? nlohmann::json(*cfg.exit_node) : nlohmann::json(nullptr)},
                {"epochs", cfg.exit_epochs},
                {"learning_rate", cfg.exit_learning_rate},
                {"finetune_backbone", cfg.exit_finetune_backbone}};
  j["du"] = {{"hidden_width", cfg.du.hidden_width},
             {"epochs", cfg.du.epochs},
             {"batch_size", cfg.du.batch_size},
             {"learning_rate", cfg.du.learning_rate},
             {"exit2_filtered", cfg.du_exit2_filtered}};
  j["cascade"] = {{"s1", cfg.s1},
                  {"s2", cfg.s2},
                  {"cost_exit1", cfg.costs.exit1},
                  {"cost_exit2", cfg.costs.exit2},
                  {"cost_communication", cfg.costs.communication},
                  {"fallback", cfg.fallback == FallbackPolicy::FailSample ? "fail_sample" : "use_local"},
                  {"timeout_ms", cfg.timeout_ms},
                  {"grid_intervals", cfg.grid_intervals}};
  j["server"] = {{"address", cfg.address}};
  return j;
}

/// Artifact locations inside a run directory. Names carry the seed so runs
/// with different seeds can share a directory.
class RunDir {
 public:
  RunDir(std::filesystem::path root, std::uint64_t seed) : root_(std::move(root)), tag_("s" + std::to_string(seed)) {}

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path dataset() const { return root_ / "data" / ("dataset-" + tag_ + ".jsonl"); }
  std::filesystem::path train() const { return root_ / "data" / ("train-" + tag_ + ".jsonl"); }
  std::filesystem::path validation() const { return root_ / "data" / ("validation-" + tag_ + ".jsonl"); }
  std::filesystem::path test() const { return root_ / "data" / ("test-" + tag_ + ".jsonl"); }
  std::filesystem::path teacher() const { return root_ / "models" / ("teacher-" + tag_ + ".json"); }
  std::filesystem::path client() const { return root_ / "models" / ("client-" + tag_ + ".json"); }
  std::filesystem::path two_exit() const { return root_ / "models" / ("two-exit-" + tag_ + ".json"); }
  std::filesystem::path two_exit_trained() const {
    return root_ / "models" / ("two-exit-trained-" + tag_ + ".json");
  }
  std::filesystem::path du_exit1() const { return root_ / "dus" / ("du-exit1-" + tag_ + ".json"); }
  std::filesystem::path du_exit2() const { return root_ / "dus" / ("du-exit2-" + tag_ + ".json"); }
  std::filesystem::path replay_validation() const {
    return root_ / "replays" / ("validation-" + tag_ + ".jsonl");
  }
  std::filesystem::path replay_test() const { return root_ / "replays" / ("test-" + tag_ + ".jsonl"); }
  std::filesystem::path nas_trace() const { return root_ / "reports" / ("nas-trace-" + tag_ + ".jsonl"); }
  std::filesystem::path sweep() const { return root_ / "reports" / ("sweep-" + tag_ + ".csv"); }
  std::filesystem::path figures() const { return root_ / "reports" / ("figures-" + tag_); }

 private:
  std::filesystem::path root_;
  std::string tag_;
};

/// Writes an artifact. Rewriting identical bytes is a no-op; replacing
/// different contents requires `force`.
inline void write_artifact(const std::filesystem::path& path, const std::string& contents, bool force) {
  std::filesystem::create_directories(path.parent_path());
  if (std::filesystem::exists(path)) {
    if (textio::read_file(path.string()) == contents) return;
    if (!force)
      throw ConfigError("refusing to overwrite '" + path.string() + "' with different contents (use --force)");
  }
  textio::write_file(path.string(), contents);
}

inline void require_artifact(const std::filesystem::path& path, const char* produced_by) {
  if (!std::filesystem::exists(path))
    throw DataError("missing artifact '" + path.string() + "' (run '" + produced_by + "' first)");
}

// ---- Stages ---------------------------------------------------------------

inline void stage_gen_data(const RunConfig& cfg, const RunDir& dir, bool force) {
  const Dataset data = gen_synthetic(cfg.synthetic_spec());
  const DataSplits s = split(data, cfg.split, cfg.stage_seed(2));
  write_artifact(dir.dataset(), dataset_to_string(data), force);
  write_artifact(dir.train(), dataset_to_string(s.train), force);
  write_artifact(dir.validation(), dataset_to_string(s.validation), force);
  write_artifact(dir.test(), dataset_to_string(s.test), force);
}

inline std::vector<std::size_t> stack_widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                             std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

inline TrainConfig hard_label_config(const ModelBudget& b, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = b.epochs;
  tc.batch_size = b.batch_size;
  tc.learning_rate = b.learning_rate;
  tc.seed = seed;
  return tc;
}

inline Dataset load_split(const std::filesystem::path& p) {
  require_artifact(p, "gen-data");
  Dataset d = load_dataset(p.string());
  if (d.empty()) throw DataError("'" + p.string() + "' holds no samples");
  return d;
}

inline MlpModel train_teacher_model(const RunConfig& cfg, const Dataset& train_set) {
  const auto widths = stack_widths(train_set.front().x.size(), cfg.teacher.hidden, cfg.classes);
  return train(make_mlp(widths, cfg.stage_seed(3)), train_set, hard_label_config(cfg.teacher, cfg.stage_seed(4))).model;
}

inline void stage_train_teacher(const RunConfig& cfg, const RunDir& dir, bool force) {
  const Dataset train_set = load_split(dir.train());
  write_artifact(dir.teacher(), model_to_string(train_teacher_model(cfg, train_set)) + "\n", force);
}

inline MlpModel load_artifact_model(const std::filesystem::path& p, const char* producer) {
  require_artifact(p, producer);
  return load_model(p.string());
}

struct ClientSearchResult {
  MlpModel client;
  SearchTrace trace;
};

/// Distilled hill climbing from the configured seed architecture, followed
/// by from-scratch hard-label retraining of the winning architecture.
inline ClientSearchResult search_client(const RunConfig& cfg, const MlpModel& teacher, const Dataset& train_set,
                                        const Dataset& validation_set) {
  const auto widths = stack_widths(train_set.front().x.size(), cfg.client.hidden, cfg.classes);
  const MlpModel seed_model =
      train(make_mlp(widths, cfg.stage_seed(5)), train_set, hard_label_config(cfg.client, cfg.stage_seed(6))).model;
  SearchConfig sc;
  sc.steps = cfg.nas_steps;
  sc.candidates = cfg.nas_candidates;
  sc.epochs_per_candidate = cfg.nas_epochs;
  sc.temperature = cfg.nas_temperature;
  sc.learning_rate = cfg.nas_learning_rate;
  sc.batch_size = cfg.client.batch_size;
  sc.teacher = &teacher;
  sc.seed = cfg.stage_seed(7);
  SearchResult found = hill_climb(seed_model, train_set, validation_set, sc);
  MlpModel client = train(reinitialize(found.best, cfg.stage_seed(8)), train_set,
                          hard_label_config(cfg.client, cfg.stage_seed(9)))
                        .model;
  return {std::move(client), std::move(found.trace)};
}

inline void stage_nas_search(const RunConfig& cfg, const RunDir& dir, bool force) {
  const Dataset train_set = load_split(dir.train());
  const Dataset validation_set = load_split(dir.validation());
  const MlpModel teacher = load_artifact_model(dir.teacher(), "train-teacher");
  const auto found = search_client(cfg, teacher, train_set, validation_set);
  write_artifact(dir.nas_trace(), trace_to_string(found.trace), force);
  write_artifact(dir.client(), model_to_string(found.client) + "\n", force);
}

inline void stage_attach_exit(const RunConfig& cfg, const RunDir& dir, bool force) {
  const MlpModel client = load_artifact_model(dir.client(), "nas-search");
  write_artifact(dir.two_exit(), two_exit_to_string(attach_exit(client, cfg.exit_node)), force);
}

inline ExitTrainConfig exit_train_config(const RunConfig& cfg) {
  ExitTrainConfig ec;
  ec.head.epochs = cfg.exit_epochs;
  ec.head.batch_size = cfg.client.batch_size;
  ec.head.learning_rate = cfg.exit_learning_rate;
  ec.head.seed = cfg.stage_seed(10);
  ec.finetune_backbone = cfg.exit_finetune_backbone;
  ec.backbone = hard_label_config(cfg.client, cfg.stage_seed(11));
  return ec;
}

inline TwoExitModel load_artifact_two_exit(const std::filesystem::path& p, const char* producer) {
  require_artifact(p, producer);
  return load_two_exit(p.string());
}

inline void stage_train_exits(const RunConfig& cfg, const RunDir& dir, bool force) {
  const Dataset train_set = load_split(dir.train());
  const TwoExitModel m = load_artifact_two_exit(dir.two_exit(), "attach-exit");
  write_artifact(dir.two_exit_trained(), two_exit_to_string(train_exits(m, train_set, exit_train_config(cfg))),
                 force);
}

/// Logits of every stage for every sample of a split.
inline std::vector<ReplayRow> make_replay(const TwoExitModel& client, const MlpModel& server, const Dataset& data) {
  std::vector<ReplayRow> rows;
  rows.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto out = client.forward(data[i].x);
    rows.push_back(ReplayRow{i, data[i].label, std::move(out.exit1), std::move(out.exit2), server.forward(data[i].x)});
  }
  return rows;
}

struct DecisionUnits {
  DecisionUnit exit1;
  DecisionUnit exit2;
};

/// Trains both decision units on validation-set logits. In filtered mode
/// the exit-2 unit only sees samples that the exit-1 unit escalates at the
/// configured s1.
inline DecisionUnits train_decision_units(const RunConfig& cfg, const std::vector<ReplayRow>& validation) {
  std::vector<DuSample> first, second;
  for (const auto& r : validation) {
    const ProbVector p1 = softmax_t(r.exit1, 1.0);
    first.push_back(DuSample{extract_meta(p1), p1.predicted_class() == r.label});
  }
  DuTrainConfig dc = cfg.du;
  dc.seed = cfg.stage_seed(12);
  DecisionUnits dus;
  dus.exit1 = train_decision_unit(first, dc);
  for (std::size_t i = 0; i < validation.size(); ++i) {
    if (cfg.du_exit2_filtered &&
        gate(certainty(dus.exit1, first[i].features), Sensitivity(cfg.s1)) == GateDecision::KeepLocal)
      continue;
    const ProbVector p2 = softmax_t(validation[i].exit2, 1.0);
    second.push_back(DuSample{extract_meta(p2), p2.predicted_class() == validation[i].label});
  }
  dc.seed = cfg.stage_seed(13);
  dus.exit2 = train_decision_unit(second, dc);
  return dus;
}

inline std::string du_to_string(const DecisionUnit& du) {
  std::ostringstream os;
  write_decision_unit(os, du);
  os << '\n';
  return os.str();
}

inline void stage_build_du(const RunConfig& cfg, const RunDir& dir, bool force) {
  const TwoExitModel client = load_artifact_two_exit(dir.two_exit_trained(), "train-exits");
  const MlpModel server = load_artifact_model(dir.teacher(), "train-teacher");
  const auto validation = make_replay(client, server, load_split(dir.validation()));
  const auto test = make_replay(client, server, load_split(dir.test()));
  const DecisionUnits dus = train_decision_units(cfg, validation);
  write_artifact(dir.replay_validation(), replay_to_string(validation), force);
  write_artifact(dir.replay_test(), replay_to_string(test), force);
  write_artifact(dir.du_exit1(), du_to_string(dus.exit1), force);
  write_artifact(dir.du_exit2(), du_to_string(dus.exit2), force);
}

/// Policy over replay rows: exits and server all read the logged logits.
inline CascadePolicy<ReplayRow> replay_policy(const RunConfig& cfg, std::shared_ptr<const DecisionUnit> du1,
                                              std::shared_ptr<const DecisionUnit> du2) {
  CascadePolicy<ReplayRow> p;
  p.exit1 = {replay_exit1, certainty_of(std::move(du1)), Sensitivity(cfg.s1)};
  p.exit2 = {replay_exit2, certainty_of(std::move(du2)), Sensitivity(cfg.s2)};
  p.server = {replay_server, cfg.fallback};
  p.costs = cfg.costs;
  return p;
}

/// Policy over raw samples: exits run the two-exit model in process.
inline CascadePolicy<Sample> model_policy(const RunConfig& cfg, std::shared_ptr<const TwoExitModel> client,
                                          std::shared_ptr<const MlpModel> server,
                                          std::shared_ptr<const DecisionUnit> du1,
                                          std::shared_ptr<const DecisionUnit> du2) {
  CascadePolicy<Sample> p;
  p.exit1 = {exit1_of(client), certainty_of(std::move(du1)), Sensitivity(cfg.s1)};
  p.exit2 = {exit2_of(client), certainty_of(std::move(du2)), Sensitivity(cfg.s2)};
  if (server) p.server = {server_model(std::move(server)), cfg.fallback};
  p.costs = cfg.costs;
  return p;
}

struct LoadedCascade {
  std::vector<ReplayRow> test;
  std::shared_ptr<const DecisionUnit> du1;
  std::shared_ptr<const DecisionUnit> du2;
};

inline LoadedCascade load_cascade(const RunDir& dir) {
  require_artifact(dir.replay_test(), "build-du");
  require_artifact(dir.du_exit1(), "build-du");
  require_artifact(dir.du_exit2(), "build-du");
  LoadedCascade c;
  c.test = load_replay(dir.replay_test().string());
  if (c.test.empty()) throw DataError("test replay is empty");
  require_server_column(c.test);
  c.du1 = std::make_shared<const DecisionUnit>(load_decision_unit(dir.du_exit1().string()));
  c.du2 = std::make_shared<const DecisionUnit>(load_decision_unit(dir.du_exit2().string()));
  return c;
}

inline SweepResult run_sweep(const RunConfig& cfg, const LoadedCascade& c) {
  const auto grid = sensitivity_grid(cfg.grid_intervals);
  return sweep<ReplayRow>(replay_policy(cfg, c.du1, c.du2), grid, grid, c.test);
}

inline void stage_sweep(const RunConfig& cfg, const RunDir& dir, bool force) {
  write_artifact(dir.sweep(), sweep_to_csv(run_sweep(cfg, load_cascade(dir))), force);
}

/// Fraction of replay rows whose column argmax matches the label.
inline double replay_accuracy(std::span<const ReplayRow> rows, const std::function<const LogitVector&(const ReplayRow&)>& col) {
  if (rows.empty()) throw DomainError("accuracy of an empty replay");
  std::size_t hits = 0;
  for (const auto& r : rows) hits += argmax(col(r)) == r.label;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

struct StandaloneAccuracy {
  double exit1 = 0.0;
  double exit2 = 0.0;
  double server = 0.0;
};

inline StandaloneAccuracy standalone_accuracy(std::span<const ReplayRow> rows) {
  return {replay_accuracy(rows, [](const ReplayRow& r) -> const LogitVector& { return r.exit1; }),
          replay_accuracy(rows, [](const ReplayRow& r) -> const LogitVector& { return r.exit2; }),
          replay_accuracy(rows, [](const ReplayRow& r) -> const LogitVector& { return *r.server; })};
}

/// Every stage from data generation through the sweep.
inline void run_pipeline(const RunConfig& cfg, const RunDir& dir, bool force) {
  stage_gen_data(cfg, dir, force);
  stage_train_teacher(cfg, dir, force);
  stage_nas_search(cfg, dir, force);
  stage_attach_exit(cfg, dir, force);
  stage_train_exits(cfg, dir, force);
  stage_build_du(cfg, dir, force);
  stage_sweep(cfg, dir, force);
}

// ---- Report ---------------------------------------------------------------

struct SweepRow {
  double s1 = 0, s2 = 0, accuracy = 0, offload_frac = 0, exit1_frac = 0, mean_cost = 0;
  std::size_t tn1 = 0, tn2 = 0, sp = 0, st = 0;
};

inline std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kSweepHeader)
    throw DataError(std::string("sweep CSV header must be exactly '") + kSweepHeader + "'");
  std::vector<SweepRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw DataError("sweep CSV line " + std::to_string(line_no) + ": expected 10 fields");
    try {
      SweepRow r;
      r.s1 = std::stod(f[0]);
      r.s2 = std::stod(f[1]);
      r.accuracy = std::stod(f[2]);
      r.offload_frac = std::stod(f[3]);
      r.exit1_frac = std::stod(f[4]);
      r.mean_cost = std::stod(f[5]);
      r.tn1 = std::stoull(f[6]);
      r.tn2 = std::stoull(f[7]);
      r.sp = std::stoull(f[8]);
      r.st = std::stoull(f[9]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("sweep CSV line " + std::to_string(line_no) + ": unparsable number");
    }
  }
  return rows;
}

struct FigureFiles {
  std::string sweep;
  std::string second_exit_only;
  std::string accuracy_grid;
  std::string classified;
};

/// Plot data behind the three sweep figures: accuracy and offload against
/// the second sensitivity with exit 1 bypassed (rows with s1 == 1), the
/// accuracy surface over (s1, s2), and how many samples finish at exit 1
/// and on the device overall.
inline FigureFiles make_figures(const std::vector<SweepRow>& rows) {
  FigureFiles out;
  std::ostringstream sweep_os, fig4, fig5, fig6;
  sweep_os << kSweepHeader << '\n';
  fig4 << "s2,accuracy,offload_frac\n";
  fig5 << "s1,s2,accuracy\n";
  fig6 << "s1,s2,exit1_frac,local_frac,exit1_count,local_count\n";
  using textio::format_real;
  for (const auto& r : rows) {
    sweep_os << format_real(r.s1) << ',' << format_real(r.s2) << ',' << format_real(r.accuracy) << ','
             << format_real(r.offload_frac) << ',' << format_real(r.exit1_frac) << ',' << format_real(r.mean_cost)
             << ',' << r.tn1 << ',' << r.tn2 << ',' << r.sp << ',' << r.st << '\n';
    if (r.s1 == 1.0) fig4 << format_real(r.s2) << ',' << format_real(r.accuracy) << ',' << format_real(r.offload_frac) << '\n';
    fig5 << format_real(r.s1) << ',' << format_real(r.s2) << ',' << format_real(r.accuracy) << '\n';
    const double local = 1.0 - r.offload_frac;
    fig6 << format_real(r.s1) << ',' << format_real(r.s2) << ',' << format_real(r.exit1_frac) << ','
         << format_real(local) << ',' << std::llround(r.exit1_frac * static_cast<double>(r.st)) << ','
         << std::llround(local * static_cast<double>(r.st)) << '\n';
  }
  out.sweep = sweep_os.str();
  out.second_exit_only = fig4.str();
  out.accuracy_grid = fig5.str();
  out.classified = fig6.str();
  return out;
}

}  // namespace cascadesplit
