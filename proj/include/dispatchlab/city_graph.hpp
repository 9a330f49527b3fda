#pragma once

// Road network, all-pairs shortest paths and mid-edge distance queries.
//
// Distances are integer meters. A missing connection is kUnreachable
// (+infinity); it is surfaced to callers rather than raised as an error.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dispatchlab::graph {

using VertexId = std::uint32_t;
using Meters = std::int64_t;

inline constexpr Meters kUnreachable = std::numeric_limits<Meters>::max();
inline constexpr VertexId kNoVertex = std::numeric_limits<VertexId>::max();
inline constexpr double kDefaultSpeedKmh = 15.5;

enum class VertexKind { restaurant, destination, crossing };

std::string_view to_string(VertexKind kind);
VertexKind parse_vertex_kind(std::string_view text);

struct Vertex {
  VertexId id = 0;
  VertexKind kind = VertexKind::crossing;
  std::string name;
  // Population for destinations, sales for restaurants, unused for crossings.
  double weight_attr = 0.0;
};

struct Edge {
  VertexId u = 0;
  VertexId v = 0;
  Meters length = 0;
};

// Undirected weighted road graph. Vertex ids must be 0..N-1 in order.
class RoadGraph {
 public:
  RoadGraph(std::vector<Vertex> vertices, std::vector<Edge> edges);

  std::size_t vertex_count() const { return vertices_.size(); }
  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Vertex& vertex(VertexId id) const { return vertices_.at(id); }

  // Shortest direct edge between u and v, if any.
  std::optional<Meters> edge_length(VertexId u, VertexId v) const;

  std::vector<VertexId> vertices_of_kind(VertexKind kind) const;

 private:
  static std::uint64_t key(VertexId u, VertexId v);

  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
  std::unordered_map<std::uint64_t, Meters> direct_;
};

// Dense symmetric N x N matrix of meters, row-major.
class DistanceMatrix {
 public:
  explicit DistanceMatrix(std::size_t n, Meters fill = kUnreachable)
      : n_(n), cells_(n * n, fill) {}

  std::size_t size() const { return n_; }
  Meters at(VertexId i, VertexId j) const { return cells_[i * n_ + j]; }
  Meters& at(VertexId i, VertexId j) { return cells_[i * n_ + j]; }
  std::span<const Meters> cells() const { return cells_; }

  bool operator==(const DistanceMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<Meters> cells_;
};

class ShortestPathMatrix {
 public:
  ShortestPathMatrix(DistanceMatrix distances, std::vector<VertexId> next_hop);

  std::size_t size() const { return distances_.size(); }
  Meters distance(VertexId i, VertexId j) const { return distances_.at(i, j); }
  const DistanceMatrix& distances() const { return distances_; }

  // First vertex after i on a shortest i -> j path; kNoVertex if unreachable,
  // j itself when i == j.
  VertexId next_hop(VertexId i, VertexId j) const { return next_[i * size() + j]; }

  // Vertex sequence i, ..., j; empty when unreachable.
  std::vector<VertexId> path(VertexId i, VertexId j) const;

 private:
  DistanceMatrix distances_;
  std::vector<VertexId> next_;
};

// Position on an edge: fraction t of the way from u toward v. The degenerate
// form u == v with t == 0 means "exactly at vertex u".
struct EdgePosition {
  VertexId u = 0;
  VertexId v = 0;
  double t = 0.0;

  static EdgePosition at(VertexId vertex) { return {vertex, vertex, 0.0}; }
  bool at_vertex() const { return u == v || t == 0.0 || t == 1.0; }
  // The vertex occupied when at_vertex() holds.
  VertexId vertex() const { return t == 1.0 ? v : u; }

  bool operator==(const EdgePosition&) const = default;
};

struct AnchoredDistance {
  VertexId anchor = kNoVertex;  // edge endpoint the route leaves through
  double offset = 0.0;          // meters from the position to the anchor
  double total = 0.0;           // offset + Shortest[anchor][target]; inf if unreachable
};

// S: direct edge length, +infinity when no edge, 0 on the diagonal.
// Throws DataError on duplicate edges with conflicting lengths.
DistanceMatrix build_adjacency(const RoadGraph& graph);

ShortestPathMatrix floyd_warshall(const DistanceMatrix& adjacency);

// Length of the edge under pos (0 for the at-vertex form).
double edge_span(const EdgePosition& pos, const RoadGraph& graph);

// Validates pos against graph; throws DataError.
void check_position(const EdgePosition& pos, const RoadGraph& graph);

AnchoredDistance position_to_vertex_distance(const EdgePosition& pos, VertexId target,
                                             const RoadGraph& graph,
                                             const ShortestPathMatrix& apsp);

// Minutes needed to cover `meters` at `speed_kmh`. Throws UsageError for speed <= 0.
double travel_time(double meters, double speed_kmh = kDefaultSpeedKmh);

// Meters covered per minute at `speed_kmh`.
double meters_per_minute(double speed_kmh = kDefaultSpeedKmh);

// nodes.csv (id,kind,name,weight_attr) and edges.csv (u,v,length_m).
RoadGraph load_graph_csv(const std::filesystem::path& nodes,
                         const std::filesystem::path& edges);

// Versioned APSP cache: "APSP" magic, u32 version, u32 n, then n*n
// little-endian u32 meters row-major with 0xFFFFFFFF for unreachable.
void write_apsp_bin(const std::filesystem::path& path, const DistanceMatrix& distances);
DistanceMatrix read_apsp_bin(const std::filesystem::path& path);

// Largest finite shortest-path distance.
Meters diameter(const ShortestPathMatrix& apsp);

}  // namespace dispatchlab::graph
