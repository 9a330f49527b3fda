#include "dispatchlab/city_graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "dispatchlab/csv.hpp"
#include "dispatchlab/errors.hpp"

namespace dispatchlab::graph {

std::string_view to_string(VertexKind kind) {
  switch (kind) {
    case VertexKind::restaurant:
      return "restaurant";
    case VertexKind::destination:
      return "destination";
    case VertexKind::crossing:
      return "crossing";
  }
  return "crossing";
}

VertexKind parse_vertex_kind(std::string_view text) {
  if (text == "restaurant") return VertexKind::restaurant;
  if (text == "destination") return VertexKind::destination;
  if (text == "crossing") return VertexKind::crossing;
  throw DataError(fmt::format("unknown vertex kind '{}'", text));
}

RoadGraph::RoadGraph(std::vector<Vertex> vertices, std::vector<Edge> edges)
    : vertices_(std::move(vertices)), edges_(std::move(edges)) {
  if (vertices_.empty()) throw DataError("graph has no vertices");
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    if (vertices_[i].id != i) {
      throw DataError(fmt::format("vertex ids must be 0..N-1 in order; found {} at position {}",
                                  vertices_[i].id, i));
    }
    if (vertices_[i].weight_attr < 0.0 || !std::isfinite(vertices_[i].weight_attr)) {
      throw DataError(fmt::format("vertex {} has invalid weight_attr", i));
    }
  }
  for (const Edge& e : edges_) {
    for (VertexId end : {e.u, e.v}) {
      if (end >= vertices_.size()) {
        throw DataError(fmt::format("edge ({},{}) references unknown vertex {}", e.u, e.v, end));
      }
    }
    if (e.u == e.v) throw DataError(fmt::format("self-loop edge at vertex {}", e.u));
    if (e.length <= 0) {
      throw DataError(fmt::format("edge ({},{}) has non-positive length {}", e.u, e.v, e.length));
    }
    auto [it, inserted] = direct_.emplace(key(e.u, e.v), e.length);
    if (!inserted) it->second = std::min(it->second, e.length);
  }
}

std::uint64_t RoadGraph::key(VertexId u, VertexId v) {
  if (u > v) std::swap(u, v);
  return (static_cast<std::uint64_t>(u) << 32) | v;
}

std::optional<Meters> RoadGraph::edge_length(VertexId u, VertexId v) const {
  auto it = direct_.find(key(u, v));
  if (it == direct_.end()) return std::nullopt;
  return it->second;
}

std::vector<VertexId> RoadGraph::vertices_of_kind(VertexKind kind) const {
  std::vector<VertexId> out;
  for (const Vertex& v : vertices_) {
    if (v.kind == kind) out.push_back(v.id);
  }
  return out;
}

ShortestPathMatrix::ShortestPathMatrix(DistanceMatrix distances, std::vector<VertexId> next_hop)
    : distances_(std::move(distances)), next_(std::move(next_hop)) {}

std::vector<VertexId> ShortestPathMatrix::path(VertexId i, VertexId j) const {
  if (distance(i, j) == kUnreachable) return {};
  std::vector<VertexId> out{i};
  while (i != j) {
    i = next_hop(i, j);
    out.push_back(i);
  }
  return out;
}

DistanceMatrix build_adjacency(const RoadGraph& graph) {
  const std::size_t n = graph.vertex_count();
  DistanceMatrix s(n);
  for (VertexId i = 0; i < n; ++i) s.at(i, i) = 0;
  for (const Edge& e : graph.edges()) {
    Meters& cell = s.at(e.u, e.v);
    if (cell != kUnreachable && cell != e.length) {
      throw DataError(fmt::format("duplicate edge ({},{}) with conflicting lengths {} and {}",
                                  e.u, e.v, cell, e.length));
    }
    cell = e.length;
    s.at(e.v, e.u) = e.length;
  }
  return s;
}

ShortestPathMatrix floyd_warshall(const DistanceMatrix& adjacency) {
  const std::size_t n = adjacency.size();
  DistanceMatrix d = adjacency;
  std::vector<VertexId> next(n * n, kNoVertex);
  for (VertexId i = 0; i < n; ++i) {
    for (VertexId j = 0; j < n; ++j) {
      if (d.at(i, j) != kUnreachable) next[i * n + j] = j;
    }
  }
  for (VertexId k = 0; k < n; ++k) {
    for (VertexId i = 0; i < n; ++i) {
      const Meters ik = d.at(i, k);
      if (ik == kUnreachable) continue;
      for (VertexId j = 0; j < n; ++j) {
        const Meters kj = d.at(k, j);
        if (kj == kUnreachable) continue;
        if (ik + kj < d.at(i, j)) {
          d.at(i, j) = ik + kj;
          next[i * n + j] = next[i * n + k];
        }
      }
    }
  }
  return ShortestPathMatrix(std::move(d), std::move(next));
}

double edge_span(const EdgePosition& pos, const RoadGraph& graph) {
  if (pos.u == pos.v) return 0.0;
  auto len = graph.edge_length(pos.u, pos.v);
  if (!len) throw DataError(fmt::format("no edge ({},{}) under position", pos.u, pos.v));
  return static_cast<double>(*len);
}

void check_position(const EdgePosition& pos, const RoadGraph& graph) {
  if (pos.u >= graph.vertex_count() || pos.v >= graph.vertex_count()) {
    throw DataError("position references unknown vertex");
  }
  if (!(pos.t >= 0.0 && pos.t <= 1.0)) throw DataError("position fraction outside [0,1]");
  if (pos.u == pos.v && pos.t != 0.0) throw DataError("at-vertex position must have t = 0");
  if (pos.u != pos.v && !graph.edge_length(pos.u, pos.v)) {
    throw DataError(fmt::format("position on missing edge ({},{})", pos.u, pos.v));
  }
}

AnchoredDistance position_to_vertex_distance(const EdgePosition& pos, VertexId target,
                                             const RoadGraph& graph,
                                             const ShortestPathMatrix& apsp) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double len = edge_span(pos, graph);
  const double to_u = len * pos.t;
  const double to_v = len - to_u;
  const Meters du = apsp.distance(pos.u, target);
  const Meters dv = apsp.distance(pos.v, target);
  const double via_u = du == kUnreachable ? inf : to_u + static_cast<double>(du);
  const double via_v = dv == kUnreachable ? inf : to_v + static_cast<double>(dv);
  if (via_u <= via_v) return {pos.u, to_u, via_u};
  return {pos.v, to_v, via_v};
}

double meters_per_minute(double speed_kmh) {
  if (!(speed_kmh > 0.0)) throw UsageError("speed must be positive");
  return speed_kmh * 1000.0 / 60.0;
}

double travel_time(double meters, double speed_kmh) {
  if (meters < 0.0) throw UsageError("distance must be non-negative");
  return meters / meters_per_minute(speed_kmh);
}

RoadGraph load_graph_csv(const std::filesystem::path& nodes_path,
                         const std::filesystem::path& edges_path) {
  const std::string nodes_name = nodes_path.string();
  const std::string edges_name = edges_path.string();
  const csv::Table nodes = csv::read(nodes_path);
  const csv::Table edges = csv::read(edges_path);

  const std::size_t c_id = nodes.column("id");
  const std::size_t c_kind = nodes.column("kind");
  const std::size_t c_name = nodes.column("name");
  const std::size_t c_weight = nodes.column("weight_attr");

  std::vector<Vertex> vertices;
  vertices.reserve(nodes.rows.size());
  for (const csv::Row& row : nodes.rows) {
    const long long id = csv::to_integer(row, c_id, nodes_name);
    if (id != static_cast<long long>(vertices.size())) {
      throw DataError(fmt::format("{}:{}: expected id {}, got {}", nodes_name, row.line,
                                  vertices.size(), id));
    }
    VertexKind kind;
    try {
      kind = parse_vertex_kind(row.fields[c_kind]);
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: {}", nodes_name, row.line, e.what()));
    }
    vertices.push_back({static_cast<VertexId>(id), kind, row.fields[c_name],
                        csv::to_double(row, c_weight, nodes_name)});
  }

  const std::size_t c_u = edges.column("u");
  const std::size_t c_v = edges.column("v");
  const std::size_t c_len = edges.column("length_m");
  std::vector<Edge> edge_list;
  edge_list.reserve(edges.rows.size());
  for (const csv::Row& row : edges.rows) {
    const long long u = csv::to_integer(row, c_u, edges_name);
    const long long v = csv::to_integer(row, c_v, edges_name);
    const long long len = csv::to_integer(row, c_len, edges_name);
    for (long long end : {u, v}) {
      if (end < 0 || end >= static_cast<long long>(vertices.size())) {
        throw DataError(
            fmt::format("{}:{}: edge references unknown node {}", edges_name, row.line, end));
      }
    }
    if (u == v || len <= 0) {
      throw DataError(fmt::format("{}:{}: invalid edge ({},{},{})", edges_name, row.line, u, v,
                                  len));
    }
    edge_list.push_back({static_cast<VertexId>(u), static_cast<VertexId>(v), len});
  }
  return RoadGraph(std::move(vertices), std::move(edge_list));
}

namespace {

constexpr std::array<char, 4> kApspMagic{'A', 'P', 'S', 'P'};
constexpr std::uint32_t kApspVersion = 1;
constexpr std::uint32_t kApspInfinity = 0xFFFFFFFFu;

void put_u32(std::ostream& out, std::uint32_t x) {
  const std::array<char, 4> bytes{static_cast<char>(x & 0xFF), static_cast<char>((x >> 8) & 0xFF),
                                  static_cast<char>((x >> 16) & 0xFF),
                                  static_cast<char>((x >> 24) & 0xFF)};
  out.write(bytes.data(), bytes.size());
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!in) throw DataError("truncated apsp.bin");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_apsp_bin(const std::filesystem::path& path, const DistanceMatrix& distances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out.write(kApspMagic.data(), kApspMagic.size());
  put_u32(out, kApspVersion);
  put_u32(out, static_cast<std::uint32_t>(distances.size()));
  for (Meters m : distances.cells()) {
    if (m != kUnreachable && m >= static_cast<Meters>(kApspInfinity)) {
      throw DataError("distance too large for apsp.bin");
    }
    put_u32(out, m == kUnreachable ? kApspInfinity : static_cast<std::uint32_t>(m));
  }
}

DistanceMatrix read_apsp_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kApspMagic) throw DataError("apsp.bin: bad magic");
  if (get_u32(in) != kApspVersion) throw DataError("apsp.bin: unsupported version");
  const std::uint32_t n = get_u32(in);
  DistanceMatrix d(n);
  for (VertexId i = 0; i < n; ++i) {
    for (VertexId j = 0; j < n; ++j) {
      const std::uint32_t x = get_u32(in);
      d.at(i, j) = x == kApspInfinity ? kUnreachable : static_cast<Meters>(x);
    }
  }
  return d;
}

Meters diameter(const ShortestPathMatrix& apsp) {
  Meters best = 0;
  for (Meters m : apsp.distances().cells()) {
    if (m != kUnreachable) best = std::max(best, m);
  }
  return best;
}

}  // namespace dispatchlab::graph
