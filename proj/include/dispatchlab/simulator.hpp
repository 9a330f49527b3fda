#pragma once

// Discrete-time courier simulation and scenario sweeps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dispatchlab/city_graph.hpp"
#include "dispatchlab/demand.hpp"
#include "dispatchlab/dispatch.hpp"

namespace dispatchlab::sim {

struct ScenarioConfig {
  double proportion = 0.3;          // share of orders carrying a tip
  std::size_t courier_count = 600;  // deliverymen
  double avg_tip = 10.0;            // mean tip amount, RMB
  std::optional<double> tip_sigma;  // defaults to avg_tip / 3
  std::uint64_t seed = 0;
  double start = -60.0;    // minutes from 12:00
  double horizon = 180.0;  // minutes simulated after start
  double tick = 1.0;       // minutes
  std::size_t order_count = 2000;
  double speed_kmh = graph::kDefaultSpeedKmh;
  std::size_t mutation_rounds = 1;  // inter-courier swap proposals per tick
  dispatch::AnnealParams anneal;

  double sigma() const { return tip_sigma.value_or(avg_tip / 3.0); }
  // Throws UsageError.
  void validate() const;

  nlohmann::json to_json() const;
  // Keys absent from `doc` keep the values of `base`.
  static ScenarioConfig from_json(const nlohmann::json& doc, const ScenarioConfig& base);
  static ScenarioConfig from_json(const nlohmann::json& doc) {
    return from_json(doc, ScenarioConfig());
  }
};

struct LatencyRecord {
  std::uint32_t order_id = 0;
  double time = 0.0;  // ordering time, minutes from 12:00
  double avg_price = 0.0;
  double proportion = 0.0;
  std::size_t deliverymen_number = 0;
  double latency = -1.0;  // minutes, or -1 when undelivered at the horizon
  double tip = 0.0;
  double distance = 0.0;  // shortest source -> destination meters
};

enum class EventKind : std::uint8_t { assign, pickup, dropoff };

struct TraceEvent {
  double time = 0.0;
  std::uint32_t courier = 0;
  EventKind kind = EventKind::assign;
  std::uint32_t order_id = 0;
  graph::VertexId vertex = 0;
};

struct ScenarioResult {
  std::vector<LatencyRecord> records;  // ordered by order id
  std::size_t injected = 0;  // orders handed to the dispatcher
  std::size_t delivered = 0;
  std::size_t undelivered = 0;
  std::vector<TraceEvent> trace;
};

ScenarioResult run_scenario(const ScenarioConfig& config, const graph::RoadGraph& graph,
                            const graph::ShortestPathMatrix& apsp,
                            const demand::SurveyMarginals& marginals, bool trace = false);

// Orders with characteristics, endpoints and scenario tips; exposed for tests.
std::vector<demand::OrderProfile> generate_orders(const ScenarioConfig& config,
                                                  const graph::RoadGraph& graph,
                                                  const graph::ShortestPathMatrix& apsp,
                                                  const demand::SurveyMarginals& marginals,
                                                  Rng& rng);

struct StepEvent {
  dispatch::StopKind kind = dispatch::StopKind::pickup;
  dispatch::OrderId order_id = 0;
  graph::VertexId vertex = 0;
  double time = 0.0;  // exact arrival time within the tick
};

struct StepResult {
  std::vector<StepEvent> events;
  double traveled = 0.0;  // meters
  bool blocked = false;   // first stop unreachable; courier idled
};

// Moves the courier dt minutes along shortest paths toward its first stop,
// completing stops on arrival (pickup marks the job picked up, dropoff
// removes it).
StepResult step_courier(dispatch::Courier& courier, double dt, double now, double speed_kmh,
                        const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp);

struct SweepResult {
  std::vector<ScenarioConfig> configs;  // with derived seeds
  std::vector<ScenarioResult> scenarios;

  std::vector<LatencyRecord> concatenated() const;
};

// Scenario i runs with seed derive_seed(master_seed, i). Output order follows
// the grid regardless of `threads`.
SweepResult sweep(std::span<const ScenarioConfig> grid, std::uint64_t master_seed,
                  const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp,
                  const demand::SurveyMarginals& marginals, unsigned threads = 1,
                  bool trace = false);

// sweep.json: {"base": {...}, "grid": {"proportion": [...], "avg_tip": [...],
// "courier_count": [...]}, "replicates": k} expands to the cartesian product
// (courier_count slowest, then avg_tip, proportion, replicate), or
// {"base": {...}, "scenarios": [{...}, ...]} lists scenarios explicitly.
std::vector<ScenarioConfig> expand_sweep(const nlohmann::json& doc,
                                         const ScenarioConfig& base = {});

void write_records_csv(const std::filesystem::path& path, std::span<const LatencyRecord> records);
std::vector<LatencyRecord> read_records_csv(const std::filesystem::path& path);

void write_trace_csv(const std::filesystem::path& path, const SweepResult& result);

}  // namespace dispatchlab::sim
