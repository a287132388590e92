#include <csignal>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cascadesplit/cascadesplit.hpp"

namespace cs = cascadesplit;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kTraining = 4, kNetwork = 5 };

struct Options {
  std::string run_dir = "run";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::optional<double> s1;
  std::optional<double> s2;
  std::optional<std::string> addr;

  // simulate / infer
  std::string server;
  std::string input_kind = "replay";
  std::string input_path;
  std::string features;

  // serve
  std::string model_path;
  std::string replay_path;
  std::string model_id = "server";
  std::size_t delay_ms = 0;

  // report
  std::string sweep_path;
  std::string out_dir;
};

cs::RunConfig resolve_config(const Options& o) {
  cs::RunConfig cfg;
  if (!o.config_path.empty()) {
    json j;
    try {
      j = json::parse(cs::textio::read_file(o.config_path));
    } catch (const json::exception& e) {
      throw cs::ConfigError("config '" + o.config_path + "' is not valid JSON: " + e.what());
    } catch (const cs::DataError& e) {
      throw cs::ConfigError(e.what());
    }
    cs::apply_config_json(cfg, j);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.s1) cfg.s1 = *o.s1;
  if (o.s2) cfg.s2 = *o.s2;
  if (o.addr) cfg.address = *o.addr;
  cfg.address = cs::resolve_listen_address(cfg.address);
  cs::validate_config(cfg);
  std::cerr << "config: " << cs::config_to_json(cfg).dump() << '\n';
  return cfg;
}

std::shared_ptr<const cs::DecisionUnit> load_du(const std::filesystem::path& p) {
  cs::require_artifact(p, "build-du");
  return std::make_shared<const cs::DecisionUnit>(cs::load_decision_unit(p.string()));
}

std::shared_ptr<cs::RemoteClient> make_client(const cs::RunConfig& cfg, const std::string& address) {
  return std::make_shared<cs::RemoteClient>(cs::parse_endpoint(address),
                                            std::chrono::milliseconds(cfg.timeout_ms));
}

json evaluation_json(const cs::RunConfig& cfg, const cs::Evaluation& e) {
  const auto& t = e.tally;
  return {{"s1", cfg.s1},
          {"s2", cfg.s2},
          {"accuracy", e.accuracy},
          {"offload_frac", e.offload_fraction},
          {"exit1_frac", e.exit1_fraction},
          {"mean_cost", e.mean_cost},
          {"Tn1", t.exit1_correct},
          {"Tn2", t.exit2_correct},
          {"Sp", t.server_correct},
          {"St", t.total},
          {"exit1", t.exit1},
          {"exit2", t.exit2},
          {"server", t.server},
          {"fallback", t.fallback},
          {"fallback_correct", t.fallback_correct},
          {"failed", t.failed}};
}

int cmd_simulate(const Options& o, const cs::RunConfig& cfg, const cs::RunDir& dir) {
  const cs::LoadedCascade c = cs::load_cascade(dir);
  const auto standalone = cs::standalone_accuracy(c.test);
  cs::Evaluation e;
  if (o.input_kind == "replay") {
    auto policy = cs::replay_policy(cfg, c.du1, c.du2);
    const std::span<const cs::ReplayRow> rows(c.test);
    e = o.server.empty() ? cs::evaluate(policy, rows)
                         : cs::run_cascade_remote(policy, rows, make_client(cfg, o.server));
  } else {
    const cs::Dataset test = cs::load_split(dir.test());
    auto client = std::make_shared<const cs::TwoExitModel>(
        cs::load_artifact_two_exit(dir.two_exit_trained(), "train-exits"));
    std::shared_ptr<const cs::MlpModel> server;
    if (o.server.empty())
      server = std::make_shared<const cs::MlpModel>(cs::load_artifact_model(dir.teacher(), "train-teacher"));
    auto policy = cs::model_policy(cfg, client, server, c.du1, c.du2);
    const std::span<const cs::Sample> samples(test);
    e = o.server.empty() ? cs::evaluate(policy, samples)
                         : cs::run_cascade_remote(policy, samples, make_client(cfg, o.server));
  }
  json out = evaluation_json(cfg, e);
  out["standalone"] = {{"exit1", standalone.exit1}, {"exit2", standalone.exit2}, {"server", standalone.server}};
  std::cout << out.dump() << std::endl;
  return kOk;
}

std::vector<double> parse_features(const std::string& text) {
  std::vector<double> x;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      x.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw cs::ConfigError("--x must be a comma-separated list of numbers");
    }
  }
  if (x.empty()) throw cs::ConfigError("--x is empty");
  return x;
}

int cmd_infer(const Options& o, const cs::RunConfig& cfg, const cs::RunDir& dir) {
  cs::Dataset data;
  if (!o.features.empty()) {
    data.push_back(cs::Sample{parse_features(o.features), 0});
  } else {
    const std::filesystem::path p = o.input_path.empty() ? dir.test() : std::filesystem::path(o.input_path);
    data = cs::load_split(p);
  }
  auto client = std::make_shared<const cs::TwoExitModel>(
      cs::load_artifact_two_exit(dir.two_exit_trained(), "train-exits"));
  for (const auto& s : data)
    if (s.x.size() != client->backbone.input_width())
      throw cs::DataError("input has " + std::to_string(s.x.size()) + " features, model expects " +
                          std::to_string(client->backbone.input_width()));
  std::shared_ptr<const cs::MlpModel> server;
  if (o.server.empty())
    server = std::make_shared<const cs::MlpModel>(cs::load_artifact_model(dir.teacher(), "train-teacher"));
  auto policy = cs::model_policy(cfg, client, server, load_du(dir.du_exit1()), load_du(dir.du_exit2()));
  if (!o.server.empty()) policy.server.classify = cs::remote_server<cs::Sample>(make_client(cfg, o.server));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const cs::RoutingOutcome r = cs::route_sample(policy, data[i], i);
    json line{{"id", r.sample_id},
              {"destination", cs::to_string(r.destination)},
              {"certainties", r.certainties},
              {"cost", r.cost()}};
    line["predicted"] = r.destination == cs::Destination::Failed ? json(nullptr) : json(r.predicted);
    if (!r.failure.empty()) line["failure"] = r.failure;
    std::cout << line.dump() << '\n';
  }
  std::cout.flush();
  return kOk;
}

int cmd_serve(const Options& o, const cs::RunConfig& cfg, const cs::RunDir& dir) {
  cs::RequestHandler handler;
  if (!o.replay_path.empty()) {
    handler = cs::replay_handler(cs::load_replay(o.replay_path));
  } else {
    const std::filesystem::path p = o.model_path.empty() ? dir.teacher() : std::filesystem::path(o.model_path);
    handler = cs::model_handler(std::make_shared<const cs::MlpModel>(cs::load_artifact_model(p, "train-teacher")));
  }
  // Block termination signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  cs::ServerOptions so;
  so.model_id = o.model_id;
  so.response_delay = std::chrono::milliseconds(o.delay_ms);
  cs::Server server(std::move(handler), so);
  server.start(cs::parse_endpoint(cfg.address));
  std::cout << "listening on " << server.endpoint().str() << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  std::cerr << "stopped on signal " << sig << '\n';
  return kOk;
}

int cmd_report(const Options& o, const cs::RunDir& dir) {
  const std::filesystem::path sweep = o.sweep_path.empty() ? dir.sweep() : std::filesystem::path(o.sweep_path);
  cs::require_artifact(sweep, "sweep");
  const auto rows = cs::parse_sweep_csv(cs::textio::read_file(sweep.string()));
  const cs::FigureFiles f = cs::make_figures(rows);
  const std::filesystem::path out = o.out_dir.empty() ? dir.figures() : std::filesystem::path(o.out_dir);
  cs::write_artifact(out / "sweep.csv", f.sweep, o.force);
  cs::write_artifact(out / "second_exit_only.csv", f.second_exit_only, o.force);
  cs::write_artifact(out / "accuracy_grid.csv", f.accuracy_grid, o.force);
  cs::write_artifact(out / "classified.csv", f.classified, o.force);
  std::cout << rows.size() << " rows -> " << out.string() << std::endl;
  return kOk;
}

int fail(const char* category, const std::string& message, int code) {
  std::cerr << "error[" << category << "]: " << message << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Early-exit cascade with decision units and server offloading"};
  app.require_subcommand(1);
  app.add_option("--run-dir", o.run_dir, "Run directory holding all artifacts")->capture_default_str();
  app.add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Run seed (overrides the config)");
  app.add_flag("--force", o.force, "Replace artifacts whose contents differ");

  struct Stage {
    const char* name;
    const char* help;
    void (*run)(const cs::RunConfig&, const cs::RunDir&, bool);
  };
  const Stage stages[] = {
      {"gen-data", "Generate the synthetic dataset and its splits", cs::stage_gen_data},
      {"train-teacher", "Train the server model", cs::stage_train_teacher},
      {"nas-search", "Distilled hill-climbing search for the client model", cs::stage_nas_search},
      {"attach-exit", "Add an early exit to the client model", cs::stage_attach_exit},
      {"train-exits", "Train the early-exit head", cs::stage_train_exits},
      {"build-du", "Write logit replays and train both decision units", cs::stage_build_du},
      {"sweep", "Evaluate the cascade over the sensitivity grid", cs::stage_sweep},
  };
  std::vector<std::pair<CLI::App*, const Stage*>> stage_cmds;
  for (const auto& s : stages) stage_cmds.emplace_back(app.add_subcommand(s.name, s.help), &s);

  auto* simulate = app.add_subcommand("simulate", "Run the cascade on the test split at one sensitivity pair");
  auto* infer = app.add_subcommand("infer", "Route samples through the cascade and print each outcome");
  for (auto* sub : {simulate, infer}) {
    sub->add_option("--s1", o.s1, "Exit-1 sensitivity")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--s2", o.s2, "Exit-2 sensitivity")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--server", o.server, "Offload to a remote server at host:port");
  }
  simulate->add_option("--input", o.input_kind, "replay: logged logits; model: run the saved models")
      ->check(CLI::IsMember({"replay", "model"}))
      ->capture_default_str();
  infer->add_option("--data", o.input_path, "Dataset file (default: the test split)");
  infer->add_option("--x", o.features, "Single comma-separated feature vector");

  auto* serve = app.add_subcommand("serve", "Host the server model over the framed protocol");
  serve->add_option("--addr", o.addr, "Listen address host:port (CASCADESPLIT_ADDR overrides)");
  auto* model_opt = serve->add_option("--model", o.model_path, "Model file (default: the run's teacher)");
  serve->add_option("--replay", o.replay_path, "Answer by sample id from a replay file")->excludes(model_opt);
  serve->add_option("--model-id", o.model_id, "Identifier returned in responses")->capture_default_str();
  serve->add_option("--delay-ms", o.delay_ms, "Artificial delay before each response");

  auto* report = app.add_subcommand("report", "Turn a sweep CSV into per-figure plot data");
  report->add_option("--sweep", o.sweep_path, "Sweep CSV (default: the run's sweep)");
  report->add_option("--out", o.out_dir, "Output directory (default: the run's figures dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    const cs::RunConfig cfg = resolve_config(o);
    const cs::RunDir dir(o.run_dir, cfg.seed);
    for (const auto& [cmd, stage] : stage_cmds)
      if (cmd->parsed()) {
        stage->run(cfg, dir, o.force);
        return kOk;
      }
    if (simulate->parsed()) return cmd_simulate(o, cfg, dir);
    if (infer->parsed()) return cmd_infer(o, cfg, dir);
    if (serve->parsed()) return cmd_serve(o, cfg, dir);
    if (report->parsed()) return cmd_report(o, dir);
    return fail("usage", "no subcommand", kUsage);
  } catch (const cs::ConfigError& e) {
    return fail("config", e.what(), kUsage);
  } catch (const cs::DataError& e) {
    return fail("data", e.what(), kData);
  } catch (const cs::DomainError& e) {
    return fail("data", e.what(), kData);
  } catch (const cs::TrainingError& e) {
    return fail("training", e.what(), kTraining);
  } catch (const cs::NetworkError& e) {
    return fail("network", e.what(), kNetwork);
  } catch (const cs::wire::ProtocolError& e) {
    return fail("network", e.what(), kNetwork);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kInternal);
  }
}
