#include "dispatchlab/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "dispatchlab/csv.hpp"
#include "dispatchlab/errors.hpp"

namespace dispatchlab::sim {
namespace {

using dispatch::Courier;
using dispatch::JobStatus;
using dispatch::StopKind;
using graph::EdgePosition;

constexpr double kArrivalSlack = 1e-6;  // meters

double truncated_normal(double mean, double sigma, double lo, double hi, Rng& rng) {
  if (sigma <= 0.0) return std::clamp(mean, lo, hi);
  std::normal_distribution<double> normal(mean, sigma);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double x = normal(rng);
    if (x >= lo && x <= hi) return x;
  }
  return std::clamp(mean, lo, hi);
}

void apply_stop(Courier& courier, const dispatch::Stop& stop) {
  auto it = std::find_if(courier.jobs.begin(), courier.jobs.end(),
                         [&](const dispatch::Job& j) { return j.id == stop.order_id; });
  if (it == courier.jobs.end()) return;
  if (stop.kind == StopKind::pickup) {
    it->status = JobStatus::picked_up;
  } else {
    courier.jobs.erase(it);
  }
  courier.queue.tips_at_vertex = dispatch::tips_at_vertices(courier.jobs);
}

std::vector<graph::VertexId> kind_ids(const graph::RoadGraph& g, graph::VertexKind kind,
                                      std::vector<double>& weights) {
  auto ids = g.vertices_of_kind(kind);
  weights.clear();
  for (auto id : ids) weights.push_back(g.vertex(id).weight_attr);
  return ids;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(proportion >= 0.0 && proportion <= 1.0)) throw UsageError("proportion must lie in [0,1]");
  if (!(tick > 0.0)) throw UsageError("tick must be positive");
  if (!(horizon > 0.0)) throw UsageError("horizon must be positive");
  const double steps = horizon / tick;
  if (std::abs(steps - std::round(steps)) > 1e-9) {
    throw UsageError("horizon must be a multiple of tick");
  }
  if (!(avg_tip >= 0.0 && avg_tip <= anneal.max_tip)) {
    throw UsageError("avg_tip must lie in [0, max_tip]");
  }
  if (!(sigma() >= 0.0)) throw UsageError("tip_sigma must be non-negative");
  if (!(speed_kmh > 0.0)) throw UsageError("speed must be positive");
  anneal.validate();
}

nlohmann::json ScenarioConfig::to_json() const {
  nlohmann::json j;
  j["proportion"] = proportion;
  j["courier_count"] = courier_count;
  j["avg_tip"] = avg_tip;
  j["tip_sigma"] = sigma();
  j["seed"] = seed;
  j["start"] = start;
  j["horizon"] = horizon;
  j["tick"] = tick;
  j["order_count"] = order_count;
  j["speed_kmh"] = speed_kmh;
  j["mutation_rounds"] = mutation_rounds;
  j["anneal"] = {{"alpha", anneal.alpha},
                 {"iterations", anneal.iterations},
                 {"min_iterations", anneal.min_iterations},
                 {"stall_window", anneal.stall_window},
                 {"max_tip", anneal.max_tip},
                 {"tip_distance_bound", anneal.tip_distance_bound}};
  return j;
}

ScenarioConfig ScenarioConfig::from_json(const nlohmann::json& doc, const ScenarioConfig& base) {
  ScenarioConfig c = base;
  try {
    c.proportion = doc.value("proportion", c.proportion);
    c.courier_count = doc.value("courier_count", c.courier_count);
    c.avg_tip = doc.value("avg_tip", c.avg_tip);
    if (doc.contains("tip_sigma")) {
      c.tip_sigma = doc.at("tip_sigma").get<double>();
    } else if (doc.contains("avg_tip")) {
      c.tip_sigma.reset();
    }
    c.seed = doc.value("seed", c.seed);
    c.start = doc.value("start", c.start);
    c.horizon = doc.value("horizon", c.horizon);
    c.tick = doc.value("tick", c.tick);
    c.order_count = doc.value("order_count", c.order_count);
    c.speed_kmh = doc.value("speed_kmh", c.speed_kmh);
    c.mutation_rounds = doc.value("mutation_rounds", c.mutation_rounds);
    if (doc.contains("anneal")) {
      const auto& a = doc.at("anneal");
      c.anneal.alpha = a.value("alpha", c.anneal.alpha);
      c.anneal.iterations = a.value("iterations", c.anneal.iterations);
      c.anneal.min_iterations = a.value("min_iterations", c.anneal.min_iterations);
      c.anneal.stall_window = a.value("stall_window", c.anneal.stall_window);
      c.anneal.max_tip = a.value("max_tip", c.anneal.max_tip);
      c.anneal.tip_distance_bound = a.value("tip_distance_bound", c.anneal.tip_distance_bound);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(fmt::format("scenario config: {}", e.what()));
  }
  return c;
}

std::vector<demand::OrderProfile> generate_orders(const ScenarioConfig& config,
                                                  const graph::RoadGraph& graph,
                                                  const graph::ShortestPathMatrix& apsp,
                                                  const demand::SurveyMarginals& marginals,
                                                  Rng& rng) {
  if (config.order_count == 0) return {};
  std::vector<double> populations, sales;
  const auto destinations = kind_ids(graph, graph::VertexKind::destination, populations);
  const auto restaurants = kind_ids(graph, graph::VertexKind::restaurant, sales);

  auto orders = demand::expand_orders(marginals, config.order_count, rng);
  demand::assign_destination(orders, destinations, populations, rng);
  for (auto& o : orders) {
    demand::assign_restaurant(o, restaurants, sales, apsp, config.speed_kmh, rng);
  }
  // Scenario tips replace the survey tips: Bernoulli(p) decides tipping, the
  // amount is normal around avg_tip truncated to [0, max_tip].
  for (auto& o : orders) {
    const bool tips = uniform01(rng) < config.proportion;
    const double amount =
        truncated_normal(config.avg_tip, config.sigma(), 0.0, config.anneal.max_tip, rng);
    o.tip = tips ? amount : 0.0;
  }
  return orders;
}

StepResult step_courier(Courier& courier, double dt, double now, double speed_kmh,
                        const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp) {
  if (!(dt > 0.0)) throw UsageError("dt must be positive");
  const double speed = graph::meters_per_minute(speed_kmh);
  StepResult result;
  double budget = dt * speed;
  EdgePosition& pos = courier.pos;
  if (pos.at_vertex()) pos = EdgePosition::at(pos.vertex());

  while (!courier.queue.stops.empty()) {
    const dispatch::Stop stop = courier.queue.stops.front();
    if (pos.at_vertex() && pos.vertex() == stop.vertex) {
      courier.queue.stops.erase(courier.queue.stops.begin());
      apply_stop(courier, stop);
      result.events.push_back({stop.kind, stop.order_id, stop.vertex,
                               now + result.traveled / speed});
      continue;
    }
    if (budget <= 0.0) break;
    if (!pos.at_vertex()) {
      const auto anchored = graph::position_to_vertex_distance(pos, stop.vertex, graph, apsp);
      if (!std::isfinite(anchored.total)) {
        result.blocked = true;
        break;
      }
      if (budget + kArrivalSlack >= anchored.offset) {
        const double moved = std::min(budget, anchored.offset);
        budget -= moved;
        result.traveled += anchored.offset;
        pos = EdgePosition::at(anchored.anchor);
      } else {
        const double len = graph::edge_span(pos, graph);
        pos.t += (anchored.anchor == pos.u ? -budget : budget) / len;
        pos.t = std::clamp(pos.t, 0.0, 1.0);
        result.traveled += budget;
        budget = 0.0;
      }
      continue;
    }
    const graph::VertexId here = pos.vertex();
    const graph::VertexId next = apsp.next_hop(here, stop.vertex);
    if (next == graph::kNoVertex) {
      result.blocked = true;
      break;
    }
    const double len = static_cast<double>(*graph.edge_length(here, next));
    if (budget + kArrivalSlack >= len) {
      budget = std::max(0.0, budget - len);
      result.traveled += len;
      pos = EdgePosition::at(next);
    } else {
      pos = {here, next, budget / len};
      result.traveled += budget;
      budget = 0.0;
    }
  }
  return result;
}

ScenarioResult run_scenario(const ScenarioConfig& config, const graph::RoadGraph& graph,
                            const graph::ShortestPathMatrix& apsp,
                            const demand::SurveyMarginals& marginals, bool trace) {
  config.validate();
  ScenarioResult result;
  if (config.order_count == 0) return result;

  Rng order_rng(derive_seed(config.seed, 1));
  Rng courier_rng(derive_seed(config.seed, 2));
  Rng dispatch_rng(derive_seed(config.seed, 3));

  const auto orders = generate_orders(config, graph, apsp, marginals, order_rng);
  std::vector<LatencyRecord> records(orders.size());
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const auto& o = orders[i];
    records[i] = {o.id,
                  o.ordering_time,
                  config.avg_tip,
                  config.proportion,
                  config.courier_count,
                  -1.0,
                  o.tip,
                  static_cast<double>(apsp.distance(o.source, o.destination))};
  }
  if (config.courier_count == 0) {
    result.records = std::move(records);
    result.injected = orders.size();
    result.undelivered = orders.size();
    return result;
  }

  std::vector<double> populations;
  const auto destinations = kind_ids(graph, graph::VertexKind::destination, populations);
  const auto starts =
      demand::place_couriers(config.courier_count, populations, destinations, courier_rng);
  std::vector<Courier> couriers(config.courier_count);
  for (std::size_t i = 0; i < couriers.size(); ++i) {
    couriers[i].id = static_cast<std::uint32_t>(i);
    couriers[i].pos = EdgePosition::at(starts[i]);
  }

  std::vector<std::size_t> arrival(orders.size());
  for (std::size_t i = 0; i < arrival.size(); ++i) arrival[i] = i;
  std::stable_sort(arrival.begin(), arrival.end(), [&](std::size_t a, std::size_t b) {
    return orders[a].ordering_time < orders[b].ordering_time;
  });

  const auto ticks = static_cast<std::size_t>(std::llround(config.horizon / config.tick));
  std::size_t next_order = 0;
  for (std::size_t k = 0; k < ticks; ++k) {
    const double now = config.start + static_cast<double>(k) * config.tick;
    while (next_order < arrival.size() && orders[arrival[next_order]].ordering_time <= now + 1e-9) {
      const auto& o = orders[arrival[next_order++]];
      const dispatch::Job job{o.id, o.source, o.destination, o.tip, JobStatus::waiting};
      const auto a =
          dispatch::assign_order(job, couriers, graph, apsp, config.anneal, dispatch_rng);
      ++result.injected;
      if (trace) {
        result.trace.push_back(
            {now, couriers[a.courier_index].id, EventKind::assign, o.id, o.source});
      }
    }
    if (config.mutation_rounds > 0 && couriers.size() >= 2) {
      dispatch::inter_courier_mutation(couriers, graph, apsp, config.anneal, dispatch_rng,
                                       config.mutation_rounds);
    }
    for (Courier& c : couriers) {
      const StepResult step = step_courier(c, config.tick, now, config.speed_kmh, graph, apsp);
      for (const StepEvent& e : step.events) {
        if (e.kind == StopKind::dropoff) {
          LatencyRecord& r = records[e.order_id];
          r.latency = std::max(0.0, e.time - orders[e.order_id].ordering_time);
          ++result.delivered;
        }
        if (trace) {
          result.trace.push_back({e.time, c.id,
                                  e.kind == StopKind::pickup ? EventKind::pickup
                                                             : EventKind::dropoff,
                                  e.order_id, e.vertex});
        }
      }
    }
  }
  result.undelivered = static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [](const LatencyRecord& r) { return r.latency < 0.0; }));
  result.records = std::move(records);
  return result;
}

std::vector<LatencyRecord> SweepResult::concatenated() const {
  std::vector<LatencyRecord> out;
  for (const auto& s : scenarios) out.insert(out.end(), s.records.begin(), s.records.end());
  return out;
}

SweepResult sweep(std::span<const ScenarioConfig> grid, std::uint64_t master_seed,
                  const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp,
                  const demand::SurveyMarginals& marginals, unsigned threads, bool trace) {
  if (grid.empty()) throw UsageError("sweep grid is empty");
  SweepResult result;
  result.configs.assign(grid.begin(), grid.end());
  for (std::size_t i = 0; i < result.configs.size(); ++i) {
    result.configs[i].seed = derive_seed(master_seed, i);
    result.configs[i].validate();
  }
  result.scenarios.resize(grid.size());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(grid.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      result.scenarios[i] = run_scenario(result.configs[i], graph, apsp, marginals, trace);
    }
    return result;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
          result.scenarios[i] = run_scenario(result.configs[i], graph, apsp, marginals, trace);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return result;
}

std::vector<ScenarioConfig> expand_sweep(const nlohmann::json& doc, const ScenarioConfig& base) {
  const ScenarioConfig root =
      doc.contains("base") ? ScenarioConfig::from_json(doc.at("base"), base) : base;
  std::vector<ScenarioConfig> out;
  if (doc.contains("scenarios")) {
    for (const auto& s : doc.at("scenarios")) out.push_back(ScenarioConfig::from_json(s, root));
  } else if (doc.contains("grid")) {
    const auto& g = doc.at("grid");
    auto values = [&](const char* key, double fallback) {
      std::vector<double> v;
      if (g.contains(key)) {
        for (const auto& x : g.at(key)) v.push_back(x.get<double>());
      } else {
        v.push_back(fallback);
      }
      return v;
    };
    const auto counts = values("courier_count", static_cast<double>(root.courier_count));
    const auto tips = values("avg_tip", root.avg_tip);
    const auto props = values("proportion", root.proportion);
    const std::size_t replicates = doc.value("replicates", std::size_t{1});
    const bool fixed_sigma = doc.contains("base") && doc.at("base").contains("tip_sigma");
    for (double c : counts) {
      for (double m : tips) {
        for (double p : props) {
          for (std::size_t r = 0; r < replicates; ++r) {
            ScenarioConfig s = root;
            s.courier_count = static_cast<std::size_t>(c);
            s.avg_tip = m;
            if (!fixed_sigma) s.tip_sigma.reset();
            s.proportion = p;
            out.push_back(s);
          }
        }
      }
    }
  } else {
    out.push_back(root);
  }
  if (out.empty()) throw UsageError("sweep expands to no scenarios");
  return out;
}

void write_records_csv(const std::filesystem::path& path, std::span<const LatencyRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "time,avg_price,proportion,deliverymen_number,latency,tip,distance\n";
  for (const auto& r : records) {
    out << fmt::format("{:.4f},{},{},{},{:.4f},{:.4f},{:.0f}\n", r.time, r.avg_price, r.proportion,
                       r.deliverymen_number, r.latency, r.tip, r.distance);
  }
}

std::vector<LatencyRecord> read_records_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::string name = path.string();
  const std::size_t c_time = t.column("time");
  const std::size_t c_avg = t.column("avg_price");
  const std::size_t c_prop = t.column("proportion");
  const std::size_t c_n = t.column("deliverymen_number");
  const std::size_t c_lat = t.column("latency");
  const std::size_t c_tip = t.column("tip");
  const std::size_t c_dist = t.column("distance");
  std::vector<LatencyRecord> out;
  out.reserve(t.rows.size());
  std::uint32_t id = 0;
  for (const auto& row : t.rows) {
    LatencyRecord r;
    r.order_id = id++;
    r.time = csv::to_double(row, c_time, name);
    r.avg_price = csv::to_double(row, c_avg, name);
    r.proportion = csv::to_double(row, c_prop, name);
    r.deliverymen_number = static_cast<std::size_t>(csv::to_integer(row, c_n, name));
    r.latency = csv::to_double(row, c_lat, name);
    r.tip = csv::to_double(row, c_tip, name);
    r.distance = csv::to_double(row, c_dist, name);
    out.push_back(r);
  }
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const SweepResult& result) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "scenario,courier,time,event,order_id,vertex\n";
  for (std::size_t s = 0; s < result.scenarios.size(); ++s) {
    for (const auto& e : result.scenarios[s].trace) {
      const char* kind = e.kind == EventKind::assign   ? "assign"
                         : e.kind == EventKind::pickup ? "pickup"
                                                       : "dropoff";
      out << fmt::format("{},{},{:.4f},{},{},{}\n", s, e.courier, e.time, kind, e.order_id,
                         e.vertex);
    }
  }
}

}  // namespace dispatchlab::sim
