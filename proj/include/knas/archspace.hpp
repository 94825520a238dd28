#pragma once

#include "knas/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <ranges>
#include <string>
#include <string_view>
#include <vector>

namespace knas {

enum class EdgeOp : std::uint8_t { none, skip, conv1x1, conv3x3, avgpool3x3 };

inline constexpr int kEdgeOpCount = 5;
inline constexpr int kCellEdges = 6;
inline constexpr int kCellNodes = 4;
inline constexpr int kCellSpaceSize = 15625;  // 5^6

std::string_view edge_op_name(EdgeOp op);
std::optional<EdgeOp> parse_edge_op(std::string_view token);

// Edge e connects (from, to) in the order (0,1),(0,2),(0,3),(1,2),(1,3),(2,3).
struct EdgeEndpoints {
  int from;
  int to;
};
inline constexpr std::array<EdgeEndpoints, kCellEdges> kCellEdgeList{
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

// A four-node cell: node 0 is the cell input, node 3 its output, and every
// other node sums the outputs of its incoming edges.
struct CellGenotype {
  std::array<EdgeOp, kCellEdges> edges{};

  // Base-5 digits over edges, edge 0 most significant.
  int index() const;
  static CellGenotype from_index(int index);

  // "op|op|op|op|op|op"
  std::string to_string() const;
  static CellGenotype parse(std::string_view text);

  EdgeOp edge(int from, int to) const;
  // True when some path of non-none edges joins node 0 to node 3.
  bool connected() const;

  friend bool operator==(const CellGenotype&, const CellGenotype&) = default;
};

// All genotypes in canonical (index) order.
inline auto enumerate_cells() {
  return std::views::iota(0, kCellSpaceSize) | std::views::transform(&CellGenotype::from_index);
}

// n distinct genotypes. The draw is a partial Fisher-Yates shuffle, so the
// first k entries of sample_cells(seed, n) equal sample_cells(seed, k).
std::vector<CellGenotype> sample_cells(std::uint64_t seed, int n);

enum class Topology { chain, highway, lookahead, dense, mlp };

std::string_view topology_name(Topology t);
Topology parse_topology(std::string_view name);

enum class HeadKind { classifier, scalar };

struct Head {
  HeadKind kind = HeadKind::classifier;
  int classes = 4;

  friend bool operator==(const Head&, const Head&) = default;
};

// Discrete encoding of a whole network.
//  chain:      stem conv3x3 -> num_cells copies of `cells` -> global pool -> head
//  highway,
//  lookahead,
//  dense:      stem linear -> num_cells generic cells of layers_per_cell
//              linear+ReLU blocks -> head
//  mlp:        layers_per_cell hidden linear+ReLU layers -> head
//              (layers_per_cell = 0 is a linear model)
struct Blueprint {
  Topology topology = Topology::chain;
  std::vector<CellGenotype> cells;
  int num_cells = 3;
  int layers_per_cell = 2;
  Shape input_shape{3, 8, 8};
  int width = 8;
  Head head;
  bool bias = true;

  friend bool operator==(const Blueprint&, const Blueprint&) = default;
};

struct BlueprintOptions {
  Shape input_shape{3, 8, 8};
  int num_cells = 3;
  Head head;
  bool bias = true;

  friend bool operator==(const BlueprintOptions&, const BlueprintOptions&) = default;
};

inline constexpr int kMinLayersPerCell = 2;
inline constexpr int kMaxLayersPerCell = 11;

// chain: one blueprint around `cell` (required). highway/lookahead/dense: one
// blueprint per layers_per_cell in [2, 11]. mlp: one blueprint, hidden depth
// taken from layers_per_cell of the default (2).
std::vector<Blueprint> make_blueprints(Topology topology, int width, std::optional<CellGenotype> cell = {},
                                       const BlueprintOptions& options = {});

}  // namespace knas
