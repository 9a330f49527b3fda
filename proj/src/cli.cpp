#include "dispatchlab/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dispatchlab/advisory.hpp"
#include "dispatchlab/city_graph.hpp"
#include "dispatchlab/demand.hpp"
#include "dispatchlab/errors.hpp"
#include "dispatchlab/simulator.hpp"
#include "dispatchlab/stats.hpp"

namespace dispatchlab::cli {
namespace {

namespace fs = std::filesystem;

const std::string kFixtureDir = DISPATCHLAB_FIXTURE_DIR;

struct GraphPaths {
  std::string nodes = kFixtureDir + "/nodes.csv";
  std::string edges = kFixtureDir + "/edges.csv";
};

struct Loaded {
  graph::RoadGraph graph;
  graph::ShortestPathMatrix apsp;
};

Loaded load(const GraphPaths& paths) {
  auto g = graph::load_graph_csv(paths.nodes, paths.edges);
  auto apsp = graph::floyd_warshall(graph::build_adjacency(g));
  return {std::move(g), std::move(apsp)};
}

fs::path output_dir(const std::string& flag) {
  const char* env = std::getenv(kOutDirEnv);
  fs::path dir = (env != nullptr && *env != '\0') ? fs::path(env) : fs::path(flag);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void print_linear_table(std::ostream& out, const advisory::LinearModel& m) {
  out << fmt::format("{:<22}{:>14}{:>12}{:>12}{:>12}\n", "Factors", "Coefficient", "Std.Err",
                     "t-value", "P>|t|");
  for (std::size_t j = 0; j < m.beta.size(); ++j) {
    out << fmt::format("{:<22}{:>14.6g}{:>12.4g}{:>12.4g}{:>12.4g}\n",
                       advisory::kLinearTermNames[j], m.beta[j], m.se[j], m.t_values[j],
                       m.p_values[j]);
  }
  out << fmt::format("n = {}  SSE = {:.6g}  s^2 = {:.6g}  R^2 = {:.4f}  F = {:.6g} (p = {:.3g})\n",
                     m.n, m.sse, m.s2, m.r_squared, m.f_statistic, m.f_p_value);
}

void print_logistic_table(std::ostream& out, const advisory::LogisticModel& m, double auc) {
  static const std::array<const char*, advisory::kLogisticFeatureCount> names{
      "time^2", "average tip price", "proportion", "deliverymen number", "tip price"};
  out << fmt::format("{:<22}{:>14}\n", "Factors", "Coefficient");
  for (std::size_t j = 0; j < m.theta.size(); ++j) {
    out << fmt::format("{:<22}{:>14.6g}\n", names[j], m.theta[j]);
  }
  if (m.has_intercept) out << fmt::format("{:<22}{:>14.6g}\n", "intercept", m.intercept);
  out << fmt::format("iterations = {}  J = {:.6g}  AUC = {:.6f}\n", m.iterations,
                     m.loss_trace.empty() ? 0.0 : m.loss_trace.back(), auc);
}

void add_graph_options(CLI::App* cmd, GraphPaths& paths) {
  cmd->add_option("--nodes", paths.nodes, "nodes.csv (id,kind,name,weight_attr)");
  cmd->add_option("--edges", paths.edges, "edges.csv (u,v,length_m)");
}

// ---- graph ---------------------------------------------------------------

int cmd_graph(const GraphPaths& paths, const std::string& out_flag, std::ostream& out) {
  const Loaded world = load(paths);
  const fs::path dir = output_dir(out_flag);
  const fs::path bin = dir / "apsp.bin";
  graph::write_apsp_bin(bin, world.apsp.distances());
  const auto& g = world.graph;
  out << fmt::format("vertices: {}\nedges: {}\n", g.vertex_count(), g.edges().size());
  out << fmt::format("restaurants: {}\ndestinations: {}\ncrossings: {}\n",
                     g.vertices_of_kind(graph::VertexKind::restaurant).size(),
                     g.vertices_of_kind(graph::VertexKind::destination).size(),
                     g.vertices_of_kind(graph::VertexKind::crossing).size());
  out << fmt::format("diameter_m: {}\n", graph::diameter(world.apsp));
  out << fmt::format("apsp: {}\n", bin.string());
  return kOk;
}

// ---- simulate ------------------------------------------------------------

struct SimulateOptions {
  GraphPaths paths;
  std::string survey = kFixtureDir + "/survey.json";
  std::string sweep_file;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool trace = false;
  sim::ScenarioConfig scenario;
  double tip_sigma = -1.0;
};

int cmd_simulate(const SimulateOptions& opt, std::ostream& out) {
  const Loaded world = load(opt.paths);
  const auto marginals = demand::load_survey_json(opt.survey);
  sim::ScenarioConfig base = opt.scenario;
  if (opt.tip_sigma >= 0.0) base.tip_sigma = opt.tip_sigma;
  std::vector<sim::ScenarioConfig> grid;
  if (!opt.sweep_file.empty()) {
    const auto doc = read_json(opt.sweep_file);
    grid = sim::expand_sweep(doc, base);
  } else {
    grid.push_back(base);
  }
  for (const auto& c : grid) c.validate();

  const auto result =
      sim::sweep(grid, opt.seed, world.graph, world.apsp, marginals, opt.threads, opt.trace);
  const fs::path dir = output_dir(opt.out_dir);
  const auto records = result.concatenated();
  sim::write_records_csv(dir / "records.csv", records);

  nlohmann::json meta;
  meta["master_seed"] = opt.seed;
  meta["record_count"] = records.size();
  meta["scenarios"] = nlohmann::json::array();
  for (std::size_t i = 0; i < result.configs.size(); ++i) {
    const auto config = result.configs[i].to_json();
    const auto& s = result.scenarios[i];
    meta["scenarios"].push_back({{"index", i},
                                 {"seed", result.configs[i].seed},
                                 {"config", config},
                                 {"config_hash", config_hash(config.dump())},
                                 {"injected", s.injected},
                                 {"delivered", s.delivered},
                                 {"undelivered", s.undelivered}});
  }
  meta["config_hash"] = config_hash(meta["scenarios"].dump());
  write_json(dir / "records.meta.json", meta);
  if (opt.trace) sim::write_trace_csv(dir / "trace.csv", result);

  for (std::size_t i = 0; i < result.scenarios.size(); ++i) {
    const auto& c = result.configs[i];
    const auto& s = result.scenarios[i];
    out << fmt::format("scenario {}: p={} m={} c={} orders={} delivered={} undelivered={}\n", i,
                       c.proportion, c.avg_tip, c.courier_count, s.injected, s.delivered,
                       s.undelivered);
  }
  out << fmt::format("records: {}\n", (dir / "records.csv").string());
  return kOk;
}

// ---- fit -----------------------------------------------------------------

struct FitOptions {
  std::string records;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_given = false;
  advisory::LogisticOptions logistic;
};

int cmd_fit(const FitOptions& opt, std::ostream& out, std::ostream& err) {
  const auto records = sim::read_records_csv(opt.records);
  std::uint64_t seed = opt.seed;
  std::string upstream_hash;
  const fs::path meta_path = fs::path(opt.records).parent_path() / "records.meta.json";
  if (fs::exists(meta_path)) {
    const auto meta = read_json(meta_path);
    if (!opt.seed_given) seed = meta.value("master_seed", seed);
    upstream_hash = meta.value("config_hash", std::string{});
  }
  advisory::FitReport report;
  try {
    report = advisory::fit_models(records, opt.logistic);
  } catch (const DataError& e) {
    err << fmt::format("fit: {} ({} records)\n", e.what(), records.size());
    throw;
  }

  const nlohmann::json options = {{"learning_rate", opt.logistic.learning_rate},
                                  {"max_iters", opt.logistic.max_iters},
                                  {"tolerance", opt.logistic.tolerance},
                                  {"intercept", opt.logistic.intercept}};
  nlohmann::json model;
  model["logistic"] = advisory::to_json(report.logistic);
  model["logistic"]["auc"] = report.auc;
  model["linear"] = advisory::to_json(report.linear);
  model["metadata"] = {
      {"seed", seed},
      {"record_count", report.record_count},
      {"survivor_count", report.survivor_count},
      {"records_config_hash", upstream_hash},
      {"config_hash", config_hash(read_text(opt.records) + options.dump())},
      {"options", options}};

  const fs::path dir = output_dir(opt.out_dir);
  write_json(dir / "model.json", model);
  const auto rows = advisory::filter_deliverable(report.logistic,
                                                 advisory::make_feature_rows(records));
  advisory::write_partial_dependence(dir / "partial_dependence.csv", report.linear, rows);

  out << "Logistic regression (deliverable within 120 min)\n";
  print_logistic_table(out, report.logistic, report.auc);
  out << fmt::format("\nLinear regression on {} of {} records\n", report.survivor_count,
                     report.record_count);
  print_linear_table(out, report.linear);
  out << fmt::format("model: {}\n", (dir / "model.json").string());
  return kOk;
}

// ---- advise --------------------------------------------------------------

struct AdviseOptions {
  std::string model;
  bool preset = false;
  double time = 0.0;
  double avg_tip = 0.0;
  double proportion = 0.0;
  double deliverymen = 0.0;
  double distance = 0.0;
  double target = 0.0;
  double max_tip = 100.0;
};

int cmd_advise(const AdviseOptions& opt, std::ostream& out, std::ostream& err) {
  advisory::LinearModel model;
  if (opt.preset) {
    model = advisory::published_linear_model();
  } else {
    if (opt.model.empty()) throw UsageError("advise needs --model or --preset");
    model = advisory::linear_from_json(read_json(opt.model).at("linear"));
  }
  const advisory::TipContext context{opt.time * opt.time, opt.avg_tip, opt.proportion,
                                     opt.deliverymen, opt.distance};
  const auto advice = advisory::advise_tip(model, context, opt.target, opt.max_tip);
  switch (advice.status) {
    case advisory::AdviceStatus::tip:
      out << fmt::format("tip: {:.2f}\npredicted_latency: {:.6f}\n", advice.tip,
                         advice.predicted_latency);
      return kOk;
    case advisory::AdviceStatus::already_met:
      out << fmt::format("tip: 0.00\npredicted_latency: {:.6f}\n", advice.predicted_latency);
      out << "note: target already met without a tip\n";
      return kOk;
    case advisory::AdviceStatus::no_effect:
      out << "infeasible\n";
      err << "reason: the model gives tips no effect on latency\n";
      return kInfeasible;
    case advisory::AdviceStatus::infeasible:
      out << "infeasible\n";
      err << fmt::format("reason: no tip in [0, {:.2f}] reaches {:.4f} min (latency at tip 0: "
                         "{:.4f})\n",
                         opt.max_tip, opt.target, advice.predicted_latency);
      return kInfeasible;
  }
  return kInfeasible;
}

// ---- sweep-demo ----------------------------------------------------------

struct DemoOptions {
  GraphPaths paths;
  std::string survey = kFixtureDir + "/survey.json";
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::size_t seeds = 20;
  std::size_t order_count = 2000;
  unsigned threads = 1;
};

int cmd_sweep_demo(const DemoOptions& opt, std::ostream& out) {
  const Loaded world = load(opt.paths);
  const auto marginals = demand::load_survey_json(opt.survey);
  std::vector<sim::ScenarioConfig> grid;
  for (std::size_t c : {300, 600, 900}) {
    for (std::size_t r = 0; r < opt.seeds; ++r) {
      sim::ScenarioConfig s;
      s.courier_count = c;
      s.order_count = opt.order_count;
      grid.push_back(s);
    }
  }
  const auto result = sim::sweep(grid, opt.seed, world.graph, world.apsp, marginals, opt.threads);
  const fs::path dir = output_dir(opt.out_dir);
  sim::write_records_csv(dir / "records.csv", result.concatenated());

  std::ofstream summary(dir / "latency_by_couriers.csv", std::ios::binary | std::ios::trunc);
  summary << "scenario,deliverymen_number,seed,mean_latency,delivered,undelivered\n";
  std::vector<double> counts, means;
  for (std::size_t i = 0; i < result.scenarios.size(); ++i) {
    std::vector<double> lat;
    for (const auto& r : result.scenarios[i].records) {
      if (r.latency >= 0.0) lat.push_back(r.latency);
    }
    const double m = lat.empty() ? 0.0 : stats::mean(lat);
    counts.push_back(static_cast<double>(result.configs[i].courier_count));
    means.push_back(m);
    summary << fmt::format("{},{},{},{:.6f},{},{}\n", i, result.configs[i].courier_count,
                           result.configs[i].seed, m, result.scenarios[i].delivered,
                           result.scenarios[i].undelivered);
  }
  const auto rho = stats::spearman_test(counts, means);
  out << fmt::format("spearman(couriers, mean latency) = {:.4f}, p = {:.3g}\n", rho.r,
                     rho.p_value);
  out << fmt::format("summary: {}\n", (dir / "latency_by_couriers.csv").string());
  return kOk;
}

}  // namespace

std::string config_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meal-delivery dispatch laboratory"};
  app.require_subcommand(1);
  std::string out_dir = ".";
  app.add_option("--out-dir", out_dir, "Output directory (env " + std::string(kOutDirEnv) +
                                           " overrides)");

  GraphPaths graph_paths;
  auto* graph_cmd = app.add_subcommand("graph", "Build the road graph and write apsp.bin");
  add_graph_options(graph_cmd, graph_paths);
  std::uint64_t graph_seed = 0;
  graph_cmd->add_option("--seed", graph_seed, "Accepted for uniformity; unused");
  graph_cmd->add_option("--out-dir", out_dir);

  SimulateOptions sim_opt;
  auto* sim_cmd = app.add_subcommand("simulate", "Run one scenario or a sweep");
  add_graph_options(sim_cmd, sim_opt.paths);
  sim_cmd->add_option("--survey", sim_opt.survey, "survey.json marginals");
  sim_cmd->add_option("--sweep", sim_opt.sweep_file, "sweep.json scenario grid");
  sim_cmd->add_option("--seed", sim_opt.seed, "Master seed");
  sim_cmd->add_option("--proportion", sim_opt.scenario.proportion, "Share of tipping orders");
  sim_cmd->add_option("--avg-tip", sim_opt.scenario.avg_tip, "Mean tip amount (RMB)");
  sim_cmd->add_option("--tip-sigma", sim_opt.tip_sigma, "Tip standard deviation (RMB)");
  sim_cmd->add_option("--deliverymen", sim_opt.scenario.courier_count, "Courier count");
  sim_cmd->add_option("--order-count", sim_opt.scenario.order_count, "Orders to generate");
  sim_cmd->add_option("--tick", sim_opt.scenario.tick, "Tick length (minutes)");
  sim_cmd->add_option("--horizon", sim_opt.scenario.horizon, "Simulated minutes");
  sim_cmd->add_option("--alpha", sim_opt.scenario.anneal.alpha, "Cooling rate");
  sim_cmd->add_option("--iterations", sim_opt.scenario.anneal.iterations, "Annealing budget");
  sim_cmd->add_option("--max-tip", sim_opt.scenario.anneal.max_tip, "Maximum tip (RMB)");
  sim_cmd->add_option("--tip-distance-bound", sim_opt.scenario.anneal.tip_distance_bound,
                      "Deadhead bound for tipped stops (m)");
  sim_cmd->add_option("--threads", sim_opt.threads, "Concurrent scenarios");
  sim_cmd->add_flag("--trace", sim_opt.trace, "Write per-courier event log");
  sim_cmd->add_option("--out-dir", out_dir);

  FitOptions fit_opt;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the logistic filter and latency model");
  fit_cmd->add_option("--records", fit_opt.records, "records.csv")->required();
  auto* fit_seed = fit_cmd->add_option("--seed", fit_opt.seed, "Seed recorded in metadata");
  fit_cmd->add_option("--learning-rate", fit_opt.logistic.learning_rate);
  fit_cmd->add_option("--max-iters", fit_opt.logistic.max_iters);
  fit_cmd->add_flag("--intercept", fit_opt.logistic.intercept, "Fit a logistic intercept");
  fit_cmd->add_option("--out-dir", out_dir);

  AdviseOptions adv_opt;
  auto* adv_cmd = app.add_subcommand("advise", "Advise a tip for a target latency");
  adv_cmd->add_option("--model", adv_opt.model, "model.json");
  adv_cmd->add_flag("--preset", adv_opt.preset, "Use the published coefficient table");
  adv_cmd->add_option("--time", adv_opt.time, "Ordering time, minutes from 12:00");
  adv_cmd->add_option("--avg-tip", adv_opt.avg_tip, "Average tip price (RMB)");
  adv_cmd->add_option("--proportion", adv_opt.proportion, "Tipping proportion");
  adv_cmd->add_option("--deliverymen", adv_opt.deliverymen, "Courier count");
  adv_cmd->add_option("--distance", adv_opt.distance, "Delivery distance (m)");
  adv_cmd->add_option("--target-latency", adv_opt.target, "Target latency (min)")->required();
  adv_cmd->add_option("--max-tip", adv_opt.max_tip, "Maximum tip (RMB)");
  std::uint64_t adv_seed = 0;
  adv_cmd->add_option("--seed", adv_seed, "Accepted for uniformity; unused");

  DemoOptions demo_opt;
  auto* demo_cmd =
      app.add_subcommand("sweep-demo", "Courier-count sweep behind the latency trend figures");
  add_graph_options(demo_cmd, demo_opt.paths);
  demo_cmd->add_option("--survey", demo_opt.survey);
  demo_cmd->add_option("--seed", demo_opt.seed);
  demo_cmd->add_option("--seeds", demo_opt.seeds, "Replicates per courier count");
  demo_cmd->add_option("--order-count", demo_opt.order_count);
  demo_cmd->add_option("--threads", demo_opt.threads);
  demo_cmd->add_option("--out-dir", out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (graph_cmd->parsed()) return cmd_graph(graph_paths, out_dir, out);
    if (sim_cmd->parsed()) {
      sim_opt.out_dir = out_dir;
      return cmd_simulate(sim_opt, out);
    }
    if (fit_cmd->parsed()) {
      fit_opt.out_dir = out_dir;
      fit_opt.seed_given = fit_seed->count() > 0;
      return cmd_fit(fit_opt, out, err);
    }
    if (adv_cmd->parsed()) return cmd_advise(adv_opt, out, err);
    if (demo_cmd->parsed()) {
      demo_opt.out_dir = out_dir;
      return cmd_sweep_demo(demo_opt, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace dispatchlab::cli
