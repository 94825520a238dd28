#include "knas/archspace.hpp"

#include "knas/errors.hpp"
#include "knas/random.hpp"

#include <numeric>
#include <random>

namespace knas {

namespace {
constexpr std::array<std::string_view, kEdgeOpCount> kOpNames{"none", "skip", "conv1x1", "conv3x3", "avgpool3x3"};
}

std::string_view edge_op_name(EdgeOp op) { return kOpNames[static_cast<std::size_t>(op)]; }

std::optional<EdgeOp> parse_edge_op(std::string_view token) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i)
    if (kOpNames[i] == token) return static_cast<EdgeOp>(i);
  return std::nullopt;
}

int CellGenotype::index() const {
  int idx = 0;
  for (EdgeOp e : edges) idx = idx * kEdgeOpCount + static_cast<int>(e);
  return idx;
}

CellGenotype CellGenotype::from_index(int index) {
  if (index < 0 || index >= kCellSpaceSize)
    throw ContractError("genotype index " + std::to_string(index) + " outside [0, 15625)");
  CellGenotype g;
  for (int e = kCellEdges - 1; e >= 0; --e) {
    g.edges[static_cast<std::size_t>(e)] = static_cast<EdgeOp>(index % kEdgeOpCount);
    index /= kEdgeOpCount;
  }
  return g;
}

std::string CellGenotype::to_string() const {
  std::string s;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (e) s += '|';
    s += edge_op_name(edges[e]);
  }
  return s;
}

CellGenotype CellGenotype::parse(std::string_view text) {
  CellGenotype g;
  std::size_t count = 0;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = text.find('|', start);
    const std::string_view token = text.substr(start, bar == std::string_view::npos ? bar : bar - start);
    if (count >= static_cast<std::size_t>(kCellEdges)) {
      throw ContractError("genotype '" + std::string(text) + "' has more than 6 edge tokens");
    }
    const auto op = parse_edge_op(token);
    if (!op)
      throw ContractError("genotype '" + std::string(text) + "': bad edge token '" + std::string(token) + "' at edge " +
                          std::to_string(count) + " (expected none|skip|conv1x1|conv3x3|avgpool3x3)");
    g.edges[count++] = *op;
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  if (count != static_cast<std::size_t>(kCellEdges))
    throw ContractError("genotype '" + std::string(text) + "' has " + std::to_string(count) +
                        " edge tokens, expected 6");
  return g;
}

EdgeOp CellGenotype::edge(int from, int to) const {
  for (std::size_t e = 0; e < kCellEdgeList.size(); ++e)
    if (kCellEdgeList[e].from == from && kCellEdgeList[e].to == to) return edges[e];
  throw ContractError("no cell edge (" + std::to_string(from) + "," + std::to_string(to) + ")");
}

bool CellGenotype::connected() const {
  std::array<bool, kCellNodes> reach{true, false, false, false};
  for (std::size_t e = 0; e < kCellEdgeList.size(); ++e)
    if (edges[e] != EdgeOp::none && reach[static_cast<std::size_t>(kCellEdgeList[e].from)])
      reach[static_cast<std::size_t>(kCellEdgeList[e].to)] = true;
  return reach[3];
}

std::vector<CellGenotype> sample_cells(std::uint64_t seed, int n) {
  if (n < 0 || n > kCellSpaceSize)
    throw ContractError("cannot sample " + std::to_string(n) + " distinct genotypes from a space of 15625");
  std::vector<int> pool(kCellSpaceSize);
  std::iota(pool.begin(), pool.end(), 0);
  auto rng = make_rng(seed, Stream::arch_sampling);
  std::vector<CellGenotype> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, kCellSpaceSize - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    out.push_back(CellGenotype::from_index(pool[static_cast<std::size_t>(i)]));
  }
  return out;
}

std::string_view topology_name(Topology t) {
  switch (t) {
    case Topology::chain: return "chain";
    case Topology::highway: return "highway";
    case Topology::lookahead: return "lookahead";
    case Topology::dense: return "dense";
    case Topology::mlp: return "mlp";
  }
  return "?";
}

Topology parse_topology(std::string_view name) {
  for (Topology t : {Topology::chain, Topology::highway, Topology::lookahead, Topology::dense, Topology::mlp})
    if (topology_name(t) == name) return t;
  throw ContractError("unknown topology '" + std::string(name) + "' (expected chain|highway|lookahead|dense|mlp)");
}

std::vector<Blueprint> make_blueprints(Topology topology, int width, std::optional<CellGenotype> cell,
                                       const BlueprintOptions& options) {
  if (width <= 0) throw ContractError("width must be positive");
  if (options.num_cells <= 0) throw ContractError("num_cells must be positive");
  Blueprint base;
  base.topology = topology;
  base.width = width;
  base.num_cells = options.num_cells;
  base.input_shape = options.input_shape;
  base.head = options.head;
  base.bias = options.bias;

  switch (topology) {
    case Topology::chain:
      if (!cell) throw ContractError("chain topology needs a cell genotype");
      if (options.input_shape.size() != 3) throw ContractError("chain topology needs [C, H, W] inputs");
      base.cells = {*cell};
      return {base};
    case Topology::mlp:
      return {base};
    case Topology::highway:
    case Topology::lookahead:
    case Topology::dense: {
      std::vector<Blueprint> out;
      for (int layers = kMinLayersPerCell; layers <= kMaxLayersPerCell; ++layers) {
        Blueprint b = base;
        b.layers_per_cell = layers;
        out.push_back(std::move(b));
      }
      return out;
    }
  }
  throw ContractError("unknown topology");
}

}  // namespace knas
