#include "dispatchlab/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "dispatchlab/errors.hpp"

namespace dispatchlab::dispatch {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Precomputed per-stop data so a permutation can be scored without map
// lookups. Permutations index into the original stop vector.
class QueueScorer {
 public:
  QueueScorer(const EdgePosition& pos, std::span<const Stop> stops,
              const std::map<VertexId, double>& tips, const graph::RoadGraph& graph,
              const graph::ShortestPathMatrix& apsp, const AnnealParams& params)
      : apsp_(apsp), bound_(params.tip_distance_bound) {
    const std::size_t n = stops.size();
    first_.resize(n);
    weight_.resize(n);
    tipped_.resize(n);
    vertex_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const VertexId v = stops[k].vertex;
      auto it = tips.find(v);
      const double tip = it == tips.end() ? 0.0 : it->second;
      vertex_[k] = v;
      weight_[k] = order_weight(tip, params.max_tip);
      tipped_[k] = tip > 0.0;
      first_[k] = graph::position_to_vertex_distance(pos, v, graph, apsp).total;
    }
  }

  // Loss plus the summed distance by which tipped stops overrun the bound;
  // the loss is only meaningful when the excess is zero.
  struct Score {
    double excess = 0.0;
    double sum = 0.0;

    double loss() const { return excess > 0.0 ? kInf : sum; }
    bool operator<(const Score& o) const {
      return excess != o.excess ? excess < o.excess : sum < o.sum;
    }
  };

  Score score(std::span<const std::uint16_t> perm) const {
    Score s;
    if (perm.empty()) return s;
    double dist = first_[perm[0]];
    if (!std::isfinite(dist)) return {kInf, kInf};
    s.sum = dist * weight_[perm[0]];
    if (tipped_[perm[0]] && dist > bound_) s.excess += dist - bound_;
    for (std::size_t i = 1; i < perm.size(); ++i) {
      const graph::Meters hop = apsp_.distance(vertex_[perm[i - 1]], vertex_[perm[i]]);
      if (hop == graph::kUnreachable) return {kInf, kInf};
      dist += static_cast<double>(hop);
      s.sum += dist * weight_[perm[i]];
      if (tipped_[perm[i]] && dist > bound_) s.excess += dist - bound_;
    }
    return s;
  }

  double loss(std::span<const std::uint16_t> perm) const { return score(perm).loss(); }

  // No stop order can do better: each stop is reached no earlier than its
  // direct distance, and a dropoff no earlier than its pickup plus the leg.
  double lower_bound(std::span<const Stop> stops) const {
    std::map<OrderId, std::size_t> pickup_of;
    for (std::size_t k = 0; k < stops.size(); ++k) {
      if (stops[k].kind == StopKind::pickup) pickup_of[stops[k].order_id] = k;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < stops.size(); ++k) {
      double reach = first_[k];
      if (stops[k].kind == StopKind::dropoff) {
        auto it = pickup_of.find(stops[k].order_id);
        if (it != pickup_of.end()) {
          const graph::Meters leg = apsp_.distance(vertex_[it->second], vertex_[k]);
          const double via = leg == graph::kUnreachable
                                 ? kInf
                                 : first_[it->second] + static_cast<double>(leg);
          reach = std::max(reach, via);
        }
      }
      sum += reach * weight_[k];
    }
    return sum;
  }

 private:
  const graph::ShortestPathMatrix& apsp_;
  double bound_;
  std::vector<double> first_;
  std::vector<double> weight_;
  std::vector<char> tipped_;
  std::vector<VertexId> vertex_;
};

bool is_guarded(const Stop& a, const Stop& b) {
  return a.kind == StopKind::pickup && b.kind == StopKind::dropoff && a.order_id == b.order_id;
}

// Uniform guarded adjacent swap over a sequence accessed through `at`.
template <typename Seq, typename At>
bool random_guarded_swap(Seq& seq, At at, Rng& rng) {
  const std::size_t n = seq.size();
  if (n < 2) return false;
  // Most indices are valid; try a few direct draws before enumerating.
  for (int attempt = 0; attempt < 8; ++attempt) {
    const std::size_t i = uniform_index(rng, n - 1);
    if (!is_guarded(at(seq[i]), at(seq[i + 1]))) {
      std::swap(seq[i], seq[i + 1]);
      return true;
    }
  }
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!is_guarded(at(seq[i]), at(seq[i + 1]))) valid.push_back(i);
  }
  if (valid.empty()) return false;
  const std::size_t i = valid[uniform_index(rng, valid.size())];
  std::swap(seq[i], seq[i + 1]);
  return true;
}

bool any_valid_swap(std::span<const Stop> stops) {
  for (std::size_t i = 0; i + 1 < stops.size(); ++i) {
    if (valid_adjacent_swap(stops, i)) return true;
  }
  return false;
}

}  // namespace

void AnnealParams::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0,1)");
  if (iterations < stall_window) throw UsageError("iterations must be >= stall_window");
  if (stall_window == 0) throw UsageError("stall_window must be positive");
  if (!(max_tip > 0.0)) throw UsageError("max_tip must be positive");
  if (!(tip_distance_bound > 0.0)) throw UsageError("tip_distance_bound must be positive");
}

double order_weight(double tip, double max_tip) {
  const double exponent = std::clamp(tip / max_tip, 0.0, 1.0);
  return std::exp2(exponent);
}

std::map<VertexId, double> tips_at_vertices(std::span<const Job> jobs) {
  std::map<VertexId, double> tips;
  for (const Job& j : jobs) {
    if (j.status == JobStatus::waiting) tips[j.source] += j.tip;
    tips[j.destination] += j.tip;
  }
  return tips;
}

RouteQueue initial_queue(std::span<const Job> jobs) {
  RouteQueue q;
  for (const Job& j : jobs) {
    if (j.status == JobStatus::picked_up) q.stops.push_back({j.destination, StopKind::dropoff, j.id});
  }
  for (const Job& j : jobs) {
    if (j.status == JobStatus::waiting) q.stops.push_back({j.source, StopKind::pickup, j.id});
  }
  for (const Job& j : jobs) {
    if (j.status == JobStatus::waiting) q.stops.push_back({j.destination, StopKind::dropoff, j.id});
  }
  q.tips_at_vertex = tips_at_vertices(jobs);
  return q;
}

double route_loss(const EdgePosition& pos, const RouteQueue& queue, const graph::RoadGraph& graph,
                  const graph::ShortestPathMatrix& apsp, const AnnealParams& params) {
  QueueScorer scorer(pos, queue.stops, queue.tips_at_vertex, graph, apsp, params);
  std::vector<std::uint16_t> perm(queue.stops.size());
  std::iota(perm.begin(), perm.end(), std::uint16_t{0});
  return scorer.loss(perm);
}

bool valid_adjacent_swap(std::span<const Stop> stops, std::size_t i) {
  return !is_guarded(stops[i], stops[i + 1]);
}

bool guarded_random_swap(std::vector<Stop>& stops, Rng& rng) {
  return random_guarded_swap(stops, [](const Stop& s) -> const Stop& { return s; }, rng);
}

bool precedence_valid(std::span<const Stop> stops, std::span<const Job> jobs) {
  std::map<OrderId, const Job*> by_id;
  for (const Job& j : jobs) by_id[j.id] = &j;
  std::map<OrderId, int> pickups, dropoffs;
  for (const Stop& s : stops) {
    auto it = by_id.find(s.order_id);
    if (it == by_id.end()) return false;
    const Job& j = *it->second;
    if (s.kind == StopKind::pickup) {
      if (j.status != JobStatus::waiting || s.vertex != j.source) return false;
      if (dropoffs[s.order_id] > 0) return false;
      ++pickups[s.order_id];
    } else {
      if (s.vertex != j.destination) return false;
      if (j.status == JobStatus::waiting && pickups[s.order_id] == 0) return false;
      ++dropoffs[s.order_id];
    }
  }
  for (const Job& j : jobs) {
    if (dropoffs[j.id] != 1) return false;
    if (pickups[j.id] != (j.status == JobStatus::waiting ? 1 : 0)) return false;
  }
  return true;
}

AnnealResult anneal_route(const EdgePosition& pos, std::span<const Job> jobs,
                          const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp,
                          const AnnealParams& params, Rng& rng) {
  if (jobs.empty()) throw UsageError("anneal_route needs at least one order");
  params.validate();

  AnnealResult result;
  result.queue = initial_queue(jobs);
  const std::vector<Stop>& stops = result.queue.stops;
  if (stops.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw UsageError("queue too long");
  }
  QueueScorer scorer(pos, stops, result.queue.tips_at_vertex, graph, apsp, params);

  std::vector<std::uint16_t> best(stops.size());
  std::iota(best.begin(), best.end(), std::uint16_t{0});
  QueueScorer::Score best_score = scorer.score(best);
  result.initial_loss = best_score.loss();
  result.accepted_losses.push_back(result.initial_loss);

  if (any_valid_swap(stops)) {
    auto stop_of = [&stops](std::uint16_t k) -> const Stop& { return stops[k]; };
    const double restart_frequency = static_cast<double>(stops.size());
    double frequency = restart_frequency;
    std::size_t since_improvement = 0;
    std::vector<std::uint16_t> current = best;
    QueueScorer::Score current_score = best_score;
    std::vector<std::uint16_t> candidate;
    for (std::size_t it = 0; it < params.iterations; ++it) {
      candidate = current;
      const auto swaps = static_cast<std::size_t>(std::floor(frequency)) + 1;
      for (std::size_t k = 0; k < swaps; ++k) random_guarded_swap(candidate, stop_of, rng);
      if (uniform01(rng) < frequency - std::floor(frequency)) {
        random_guarded_swap(candidate, stop_of, rng);
      }
      const QueueScorer::Score score = scorer.score(candidate);
      ++result.proposals;
      if (score < current_score) {
        current.swap(candidate);
        current_score = score;
        since_improvement = 0;
        if (current_score < best_score) {
          const bool finite_gain = std::isfinite(current_score.loss());
          best = current;
          best_score = current_score;
          if (finite_gain) result.accepted_losses.push_back(best_score.loss());
        }
      } else {
        ++since_improvement;
      }
      if (params.record_trace) result.trace.push_back({it, score.loss(), best_score.loss()});
      frequency *= params.alpha;
      if (since_improvement >= params.stall_window) {
        if (result.proposals >= params.min_iterations) break;
        // Restart from a fresh random ordering; the best queue is kept.
        for (std::size_t k = 0; k < 4 * current.size(); ++k) {
          random_guarded_swap(current, stop_of, rng);
        }
        current_score = scorer.score(current);
        frequency = restart_frequency;
        since_improvement = 0;
      }
    }
    std::vector<Stop> ordered;
    ordered.reserve(stops.size());
    for (std::uint16_t k : best) ordered.push_back(stops[k]);
    result.queue.stops = std::move(ordered);
  }
  result.loss = best_score.loss();
  result.infeasible = !std::isfinite(result.loss);
  return result;
}

void write_anneal_trace(const std::filesystem::path& path, const AnnealResult& result) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << "iteration,proposed_loss,accepted_loss\n";
  for (const auto& p : result.trace) {
    out << fmt::format("{},{:.6f},{:.6f}\n", p.iteration, p.proposed_loss, p.accepted_loss);
  }
}

double courier_loss(const Courier& courier, const graph::RoadGraph& graph,
                    const graph::ShortestPathMatrix& apsp, const AnnealParams& params) {
  return route_loss(courier.pos, courier.queue, graph, apsp, params);
}

double system_loss(std::span<const Courier> couriers, const graph::RoadGraph& graph,
                   const graph::ShortestPathMatrix& apsp, const AnnealParams& params) {
  double total = 0.0;
  for (const Courier& c : couriers) total += courier_loss(c, graph, apsp, params);
  return total;
}

Assignment assign_order(const Job& job, std::span<Courier> couriers,
                        const graph::RoadGraph& graph, const graph::ShortestPathMatrix& apsp,
                        const AnnealParams& params, Rng& rng) {
  if (couriers.empty()) throw UsageError("assign_order needs at least one courier");
  const std::uint64_t base_seed = rng();

  struct Candidate {
    std::size_t index;
    double bound;
  };
  std::vector<Candidate> order;
  order.reserve(couriers.size());
  std::vector<std::vector<Job>> tentative(couriers.size());
  for (std::size_t i = 0; i < couriers.size(); ++i) {
    tentative[i] = couriers[i].jobs;
    tentative[i].push_back(job);
    const RouteQueue q = initial_queue(tentative[i]);
    QueueScorer scorer(couriers[i].pos, q.stops, q.tips_at_vertex, graph, apsp, params);
    order.push_back({i, scorer.lower_bound(q.stops)});
  }
  std::sort(order.begin(), order.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.bound != b.bound) return a.bound < b.bound;
    return couriers[a.index].id < couriers[b.index].id;
  });

  // When every courier is infinite the tip bound is relaxed so the order
  // still goes to the cheapest route rather than the lowest id.
  auto search = [&](const AnnealParams& p, std::size_t& evaluated, AnnealResult& best_result) {
    Assignment best;
    best.loss = kInf;
    bool have_best = false;
    for (const Candidate& c : order) {
      const Courier& courier = couriers[c.index];
      if (have_best) {
        if (c.bound > best.loss) break;
        if (c.bound == best.loss && courier.id > couriers[best.courier_index].id) continue;
      }
      Rng local(derive_seed(base_seed, courier.id));
      AnnealResult r = anneal_route(courier.pos, tentative[c.index], graph, apsp, p, local);
      ++evaluated;
      const bool better =
          !have_best || r.loss < best.loss ||
          (r.loss == best.loss && courier.id < couriers[best.courier_index].id);
      if (better) {
        best.courier_index = c.index;
        best.loss = r.loss;
        best_result = std::move(r);
        have_best = true;
      }
    }
    return best;
  };

  std::size_t evaluated = 0;
  AnnealResult best_result;
  Assignment best = search(params, evaluated, best_result);
  if (!std::isfinite(best.loss)) {
    AnnealParams relaxed = params;
    relaxed.tip_distance_bound = kInf;
    best = search(relaxed, evaluated, best_result);
    best.all_infinite = true;
    best.loss = kInf;
  }
  best.evaluated = evaluated;
  Courier& winner = couriers[best.courier_index];
  winner.jobs = std::move(tentative[best.courier_index]);
  winner.queue = std::move(best_result.queue);
  return best;
}

MutationResult inter_courier_mutation(std::span<Courier> couriers, const graph::RoadGraph& graph,
                                      const graph::ShortestPathMatrix& apsp,
                                      const AnnealParams& params, Rng& rng, std::size_t rounds) {
  MutationResult result;
  if (rounds == 0) return result;
  if (couriers.size() < 2) throw UsageError("mutation needs at least two couriers");

  auto waiting_jobs = [](const Courier& c) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < c.jobs.size(); ++k) {
      if (c.jobs[k].status == JobStatus::waiting) idx.push_back(k);
    }
    return idx;
  };
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < couriers.size(); ++i) {
    if (!waiting_jobs(couriers[i]).empty()) eligible.push_back(i);
  }
  if (params.record_trace) result.system_loss.push_back(system_loss(couriers, graph, apsp, params));
  if (eligible.size() < 2) return result;

  for (std::size_t round = 0; round < rounds; ++round) {
    ++result.proposals;
    const std::size_t ia = uniform_index(rng, eligible.size());
    std::size_t ib = uniform_index(rng, eligible.size() - 1);
    if (ib >= ia) ++ib;
    Courier& a = couriers[eligible[ia]];
    Courier& b = couriers[eligible[ib]];
    const auto wa = waiting_jobs(a);
    const auto wb = waiting_jobs(b);
    const std::size_t ka = wa[uniform_index(rng, wa.size())];
    const std::size_t kb = wb[uniform_index(rng, wb.size())];

    const double before =
        courier_loss(a, graph, apsp, params) + courier_loss(b, graph, apsp, params);
    std::vector<Job> jobs_a = a.jobs;
    std::vector<Job> jobs_b = b.jobs;
    std::swap(jobs_a[ka], jobs_b[kb]);
    AnnealResult ra = anneal_route(a.pos, jobs_a, graph, apsp, params, rng);
    AnnealResult rb = anneal_route(b.pos, jobs_b, graph, apsp, params, rng);
    if (ra.loss + rb.loss < before) {
      a.jobs = std::move(jobs_a);
      a.queue = std::move(ra.queue);
      b.jobs = std::move(jobs_b);
      b.queue = std::move(rb.queue);
      ++result.accepted;
    }
    if (params.record_trace) {
      result.system_loss.push_back(system_loss(couriers, graph, apsp, params));
    }
  }
  return result;
}

}  // namespace dispatchlab::dispatch
