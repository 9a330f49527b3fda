#include "dispatchlab/city_graph.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <queue>
#include <random>

#include "dispatchlab/errors.hpp"
#include "test_util.hpp"

namespace dispatchlab::graph {
namespace {

RoadGraph make_graph(std::size_t n, std::vector<Edge> edges) {
  std::vector<Vertex> vs(n);
  for (std::size_t i = 0; i < n; ++i) vs[i].id = static_cast<VertexId>(i);
  return RoadGraph(std::move(vs), std::move(edges));
}

// Dijkstra from every source over an adjacency list.
std::vector<std::vector<Meters>> dijkstra_all(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::pair<VertexId, Meters>>> adj(n);
  for (const Edge& e : edges) {
    adj[e.u].push_back({e.v, e.length});
    adj[e.v].push_back({e.u, e.length});
  }
  std::vector<std::vector<Meters>> out(n, std::vector<Meters>(n, kUnreachable));
  for (std::size_t s = 0; s < n; ++s) {
    auto& dist = out[s];
    using Item = std::pair<Meters, VertexId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s] = 0;
    pq.push({0, static_cast<VertexId>(s)});
    while (!pq.empty()) {
      auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      for (auto [v, w] : adj[u]) {
        if (d + w < dist[v]) {
          dist[v] = d + w;
          pq.push({dist[v], v});
        }
      }
    }
  }
  return out;
}

std::vector<Edge> random_connected_edges(std::size_t n, std::mt19937_64& gen) {
  std::uniform_int_distribution<Meters> len(1, 5000);
  std::vector<Edge> edges;
  for (std::size_t v = 1; v < n; ++v) {
    const auto u = std::uniform_int_distribution<std::size_t>(0, v - 1)(gen);
    edges.push_back({static_cast<VertexId>(u), static_cast<VertexId>(v), len(gen)});
  }
  std::bernoulli_distribution extra(0.3);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      bool present = false;
      for (const Edge& e : edges) present |= (e.u == u && e.v == v);
      if (!present && extra(gen)) {
        edges.push_back({static_cast<VertexId>(u), static_cast<VertexId>(v), len(gen)});
      }
    }
  }
  return edges;
}

const std::vector<Edge> kTriangle = {{0, 1, 1000}, {1, 2, 2000}, {0, 2, 5000}};

TEST(CityGraph, AdjacencyTriangle) {
  const DistanceMatrix s = build_adjacency(make_graph(3, kTriangle));
  EXPECT_EQ(s.at(0, 1), 1000);
  EXPECT_EQ(s.at(1, 0), 1000);
  EXPECT_EQ(s.at(0, 2), 5000);
  EXPECT_EQ(s.at(1, 1), 0);
}

TEST(CityGraph, AdjacencySingleVertex) {
  const DistanceMatrix s = build_adjacency(make_graph(1, {}));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.at(0, 0), 0);
}

TEST(CityGraph, AdjacencyMissingEdgeIsInfinite) {
  const DistanceMatrix s = build_adjacency(make_graph(3, {{0, 1, 10}}));
  EXPECT_EQ(s.at(0, 2), kUnreachable);
  EXPECT_EQ(s.at(2, 0), kUnreachable);
}

TEST(CityGraph, ConflictingDuplicateEdgeRejected) {
  EXPECT_THROW(build_adjacency(make_graph(2, {{0, 1, 10}, {1, 0, 12}})), DataError);
  EXPECT_NO_THROW(build_adjacency(make_graph(2, {{0, 1, 10}, {1, 0, 10}})));
}

TEST(CityGraph, InvalidEdgesRejected) {
  EXPECT_THROW(make_graph(2, {{0, 0, 10}}), DataError);
  EXPECT_THROW(make_graph(2, {{0, 1, 0}}), DataError);
  EXPECT_THROW(make_graph(2, {{0, 5, 10}}), DataError);
}

TEST(CityGraph, FloydTriangleGoesThroughMiddle) {
  const DistanceMatrix s = build_adjacency(make_graph(3, kTriangle));
  const DistanceMatrix before = s;
  const ShortestPathMatrix p = floyd_warshall(s);
  EXPECT_EQ(p.distance(0, 2), 3000);
  EXPECT_EQ(p.next_hop(0, 2), 1u);
  EXPECT_EQ(p.path(0, 2), (std::vector<VertexId>{0, 1, 2}));
  EXPECT_EQ(s, before);
  for (VertexId i = 0; i < 3; ++i) EXPECT_EQ(p.distance(i, i), 0);
}

TEST(CityGraph, DisconnectedStaysInfinite) {
  const ShortestPathMatrix p = floyd_warshall(build_adjacency(make_graph(3, {{0, 1, 10}})));
  EXPECT_EQ(p.distance(0, 2), kUnreachable);
  EXPECT_EQ(p.next_hop(0, 2), kNoVertex);
  EXPECT_TRUE(p.path(0, 2).empty());
}

TEST(CityGraph, MatchesDijkstraOnRandomGraphs) {
  std::mt19937_64 gen(1234);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 12)(gen);
    const auto edges = random_connected_edges(n, gen);
    const ShortestPathMatrix p = floyd_warshall(build_adjacency(make_graph(n, edges)));
    const auto oracle = dijkstra_all(n, edges);
    for (VertexId i = 0; i < n; ++i) {
      for (VertexId j = 0; j < n; ++j) ASSERT_EQ(p.distance(i, j), oracle[i][j]);
    }
  }
}

TEST(CityGraph, ShortestPathProperties) {
  std::mt19937_64 gen(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 20)(gen);
    const auto edges = random_connected_edges(n, gen);
    const RoadGraph g = make_graph(n, edges);
    const DistanceMatrix s = build_adjacency(g);
    const ShortestPathMatrix p = floyd_warshall(s);
    for (VertexId i = 0; i < n; ++i) {
      for (VertexId j = 0; j < n; ++j) {
        EXPECT_EQ(p.distance(i, j), p.distance(j, i));
        EXPECT_LE(p.distance(i, j), s.at(i, j));
        for (VertexId k = 0; k < n; ++k) {
          EXPECT_LE(p.distance(i, j), p.distance(i, k) + p.distance(k, j));
        }
        const auto path = p.path(i, j);
        ASSERT_FALSE(path.empty());
        EXPECT_EQ(path.front(), i);
        EXPECT_EQ(path.back(), j);
        Meters sum = 0;
        for (std::size_t h = 1; h < path.size(); ++h) {
          sum += g.edge_length(path[h - 1], path[h]).value();
        }
        EXPECT_EQ(sum, p.distance(i, j));
      }
    }
  }
}

TEST(CityGraph, PositionAtVertex) {
  const RoadGraph g = make_graph(3, kTriangle);
  const auto p = floyd_warshall(build_adjacency(g));
  EXPECT_EQ(position_to_vertex_distance(EdgePosition::at(1), 1, g, p).total, 0.0);
  EXPECT_EQ(position_to_vertex_distance({0, 1, 0.0}, 0, g, p).total, 0.0);
}

TEST(CityGraph, PositionMidpoint) {
  const RoadGraph g = make_graph(2, {{0, 1, 1000}});
  const auto p = floyd_warshall(build_adjacency(g));
  const auto d = position_to_vertex_distance({0, 1, 0.5}, 1, g, p);
  EXPECT_DOUBLE_EQ(d.total, 500.0);
  EXPECT_EQ(d.anchor, 1u);
}

TEST(CityGraph, PositionTieGoesToU) {
  const RoadGraph g = make_graph(3, {{0, 1, 1000}, {0, 2, 500}, {1, 2, 500}});
  const auto p = floyd_warshall(build_adjacency(g));
  EXPECT_EQ(position_to_vertex_distance({1, 0, 0.5}, 2, g, p).anchor, 1u);
  EXPECT_EQ(position_to_vertex_distance({0, 1, 0.5}, 2, g, p).anchor, 0u);
}

TEST(CityGraph, PositionDetourMatchesEnumeration) {
  // Long edge 0-1; a cheap detour 0-2-3-1 makes "back through u" better
  // than continuing along the edge for positions near u.
  const std::vector<Edge> edges = {{0, 1, 4000}, {0, 2, 300}, {2, 3, 300}, {3, 1, 300}};
  const RoadGraph g = make_graph(4, edges);
  const auto p = floyd_warshall(build_adjacency(g));
  for (double t : {0.0, 0.1, 0.25, 0.5, 0.9, 1.0}) {
    for (VertexId target = 0; target < 4; ++target) {
      const double via_u = 4000 * t + static_cast<double>(p.distance(0, target));
      const double via_v = 4000 * (1 - t) + static_cast<double>(p.distance(1, target));
      const auto d = position_to_vertex_distance({0, 1, t}, target, g, p);
      EXPECT_DOUBLE_EQ(d.total, std::min(via_u, via_v));
      EXPECT_EQ(d.anchor, via_u <= via_v ? 0u : 1u);
    }
  }
  const auto d = position_to_vertex_distance({0, 1, 0.25}, 1, g, p);
  EXPECT_DOUBLE_EQ(d.total, 1000.0 + 900.0);
  EXPECT_EQ(d.anchor, 0u);
}

TEST(CityGraph, PositionUnreachable) {
  const RoadGraph g = make_graph(3, {{0, 1, 100}});
  const auto p = floyd_warshall(build_adjacency(g));
  EXPECT_TRUE(std::isinf(position_to_vertex_distance({0, 1, 0.3}, 2, g, p).total));
}

TEST(CityGraph, CheckPosition) {
  const RoadGraph g = make_graph(3, {{0, 1, 100}});
  EXPECT_NO_THROW(check_position({0, 1, 0.3}, g));
  EXPECT_NO_THROW(check_position(EdgePosition::at(2), g));
  EXPECT_THROW(check_position({0, 2, 0.3}, g), DataError);
  EXPECT_THROW(check_position({0, 1, 1.5}, g), DataError);
  EXPECT_THROW(check_position({1, 1, 0.5}, g), DataError);
}

TEST(CityGraph, TravelTime) {
  EXPECT_DOUBLE_EQ(travel_time(15500.0, 15.5), 60.0);
  EXPECT_DOUBLE_EQ(travel_time(0.0), 0.0);
  EXPECT_DOUBLE_EQ(travel_time(7750.0), 30.0);
  EXPECT_THROW(travel_time(100.0, 0.0), UsageError);
  EXPECT_THROW(travel_time(100.0, -1.0), UsageError);
}

TEST(CityGraph, LoadCsvErrorsNameLineAndNode) {
  test::TempDir dir;
  const auto nodes = dir.write("nodes.csv", "id,kind,name,weight_attr\n0,restaurant,a,1\n1,crossing,b,0\n");
  const auto edges = dir.write("edges.csv", "u,v,length_m\n0,1,100\n0,7,50\n");
  try {
    load_graph_csv(nodes, edges);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
    EXPECT_NE(msg.find('7'), std::string::npos) << msg;
  }
  const auto bad = dir.write("bad.csv", "u,v,length_m\n0,1\n");
  EXPECT_THROW(load_graph_csv(nodes, bad), DataError);
}

TEST(CityGraph, FixtureSummary) {
  const RoadGraph g = test::load_fixture_graph();
  EXPECT_EQ(g.vertices_of_kind(VertexKind::restaurant).size(), 10u);
  EXPECT_EQ(g.vertices_of_kind(VertexKind::destination).size(), 10u);
  const auto p = floyd_warshall(build_adjacency(g));
  for (VertexId i = 0; i < g.vertex_count(); ++i) {
    for (VertexId j = 0; j < g.vertex_count(); ++j) ASSERT_NE(p.distance(i, j), kUnreachable);
  }
}

TEST(CityGraph, ApspBinRoundTrip) {
  test::TempDir dir;
  const RoadGraph g = make_graph(4, {{0, 1, 10}, {1, 2, 20}});
  const DistanceMatrix d = floyd_warshall(build_adjacency(g)).distances();
  write_apsp_bin(dir.path() / "a.bin", d);
  write_apsp_bin(dir.path() / "b.bin", d);
  EXPECT_EQ(read_apsp_bin(dir.path() / "a.bin"), d);
  EXPECT_EQ(test::slurp(dir.path() / "a.bin"), test::slurp(dir.path() / "b.bin"));
  const std::string bytes = test::slurp(dir.path() / "a.bin");
  EXPECT_EQ(bytes.substr(0, 4), "APSP");
  EXPECT_EQ(bytes.size(), 12u + 16u * 4u);
  std::ofstream(dir.path() / "bad.bin") << "NOPE";
  EXPECT_THROW(read_apsp_bin(dir.path() / "bad.bin"), DataError);
}

TEST(CityGraph, Diameter) {
  const auto p = floyd_warshall(build_adjacency(make_graph(3, kTriangle)));
  EXPECT_EQ(diameter(p), 3000);
}

}  // namespace
}  // namespace dispatchlab::graph
