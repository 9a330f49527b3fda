#pragma once

// Tip-weighted route scoring, genetic-annealing queue optimization, and
// order-to-courier assignment.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "dispatchlab/city_graph.hpp"
#include "dispatchlab/rng.hpp"

namespace dispatchlab::dispatch {

using graph::EdgePosition;
using graph::VertexId;
using OrderId = std::uint32_t;

enum class StopKind : std::uint8_t { pickup, dropoff };

struct Stop {
  VertexId vertex = 0;
  StopKind kind = StopKind::pickup;
  OrderId order_id = 0;

  bool operator==(const Stop&) const = default;
};

enum class JobStatus : std::uint8_t { waiting, picked_up };

// The dispatcher's view of one order held by a courier.
struct Job {
  OrderId id = 0;
  VertexId source = 0;
  VertexId destination = 0;
  double tip = 0.0;
  JobStatus status = JobStatus::waiting;
};

struct RouteQueue {
  std::vector<Stop> stops;
  // Summed tip of every stop at a vertex: a waiting order's tip counts at its
  // source and destination, a picked-up order's only at its destination.
  std::map<VertexId, double> tips_at_vertex;
};

struct AnnealParams {
  double alpha = 0.95;           // cooling rate applied to the swap frequency
  std::size_t iterations = 2000;  // proposal budget
  std::size_t min_iterations = 500;
  std::size_t stall_window = 200;
  double max_tip = 100.0;               // RMB
  double tip_distance_bound = 7500.0;  // meters
  bool record_trace = false;

  // Throws UsageError.
  void validate() const;
};

// 2^(tip/max_tip) with the exponent clamped to [0,1].
double order_weight(double tip, double max_tip);

std::map<VertexId, double> tips_at_vertices(std::span<const Job> jobs);

// Picked-up dropoffs, then pickups, then dropoffs of waiting orders.
RouteQueue initial_queue(std::span<const Job> jobs);

// Sum over stops of (deadhead distance so far) * weight; +infinity when a
// tipped stop lies beyond tip_distance_bound or a stop is unreachable.
double route_loss(const EdgePosition& pos, const RouteQueue& queue, const graph::RoadGraph& graph,
                  const graph::ShortestPathMatrix& apsp, const AnnealParams& params);

// False only when stops[i] is the pickup of stops[i+1]'s order.
bool valid_adjacent_swap(std::span<const Stop> stops, std::size_t i);

// Applies one uniformly chosen guarded adjacent swap. Returns false (no-op)
// when no index passes the guard.
bool guarded_random_swap(std::vector<Stop>& stops, Rng& rng);

// Every pickup precedes its order's dropoff, each job has exactly one
// dropoff, and a pickup iff still waiting.
bool precedence_valid(std::span<const Stop> stops, std::span<const Job> jobs);

struct AnnealTracePoint {
  std::size_t iteration = 0;
  double proposed_loss = 0.0;
  double accepted_loss = 0.0;
};

struct AnnealResult {
  RouteQueue queue;
  double loss = 0.0;
  double initial_loss = 0.0;
  bool infeasible = false;  // every queue seen scored +infinity
  std::size_t proposals = 0;
  std::vector<double> accepted_losses;  // initial loss, then each accepted improvement
  std::vector<AnnealTracePoint> trace;  // filled when params.record_trace
};

AnnealResult anneal_route(const EdgePosition& pos, std::span<const Job> jobs,
                          const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp,
                          const AnnealParams& params, Rng& rng);

void write_anneal_trace(const std::filesystem::path& path, const AnnealResult& result);

struct Courier {
  std::uint32_t id = 0;
  EdgePosition pos;
  std::vector<Job> jobs;
  RouteQueue queue;
};

struct Assignment {
  std::size_t courier_index = 0;
  double loss = 0.0;
  bool all_infinite = false;  // every route broke the tip bound; chosen with it relaxed
  std::size_t evaluated = 0;  // couriers actually annealed
};

// Fake-assigns `job` to every courier, commits to the lowest resulting loss
// (ties -> lowest courier id). Each courier anneals with a generator derived
// from one draw of `rng` and its id, so the outcome does not depend on
// evaluation order. Couriers whose loss lower bound cannot beat the incumbent
// are skipped.
Assignment assign_order(const Job& job, std::span<Courier> couriers,
                        const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp,
                        const AnnealParams& params, Rng& rng);

struct MutationResult {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  // System loss before the first round and after each round.
  std::vector<double> system_loss;
};

// Single-order swaps between couriers, accepted when the two couriers'
// summed loss strictly decreases.
MutationResult inter_courier_mutation(std::span<Courier> couriers, const graph::RoadGraph& graph,
                                      const graph::ShortestPathMatrix& apsp,
                                      const AnnealParams& params, Rng& rng, std::size_t rounds);

double courier_loss(const Courier& courier, const graph::RoadGraph& graph,
                    const graph::ShortestPathMatrix& apsp, const AnnealParams& params);

double system_loss(std::span<const Courier> couriers, const graph::RoadGraph& graph,
                   const graph::ShortestPathMatrix& apsp, const AnnealParams& params);

}  // namespace dispatchlab::dispatch
