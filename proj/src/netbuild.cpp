#include "knas/netbuild.hpp"

#include "knas/errors.hpp"
#include "knas/random.hpp"

#include <cmath>
#include <map>
#include <random>

namespace knas {

namespace {

class Builder {
 public:
  explicit Builder(const Blueprint& bp) : bp_(bp) {}

  Graph build() {
    const NodeId x = g_.add_input(bp_.input_shape);
    NodeId features = -1;
    switch (bp_.topology) {
      case Topology::chain: features = chain(x); break;
      case Topology::highway:
      case Topology::lookahead:
      case Topology::dense: features = generic(x); break;
      case Topology::mlp: features = mlp(x); break;
    }
    head(features);
    g_.topological_order();
    return std::move(g_);
  }

 private:
  std::vector<ParamId> weights(const std::string& name, Shape shape, int fan_in, int out) {
    std::vector<ParamId> ids{g_.add_parameter(name + ".w", Tensor(std::move(shape)), fan_in)};
    if (bp_.bias) ids.push_back(g_.add_parameter(name + ".b", Tensor({out}), fan_in, true));
    return ids;
  }

  NodeId linear(NodeId in, int out, const std::string& name) {
    const Shape& s = g_.nodes()[static_cast<std::size_t>(in)].shape;
    const int features = s.empty() ? 1 : static_cast<int>(shape_size(s));
    return g_.add_op(OpKind::linear, {in}, weights(name, {out, features}, features, out), name);
  }

  NodeId conv(OpKind kind, NodeId in, int out, const std::string& name) {
    const int c = g_.nodes()[static_cast<std::size_t>(in)].shape.at(0);
    const int k = kind == OpKind::conv3x3 ? 3 : 1;
    return g_.add_op(kind, {in}, weights(name, {out, c, k, k}, c * k * k, out), name);
  }

  NodeId block(NodeId in, const std::string& name) {
    return g_.add_op(OpKind::relu, {linear(in, bp_.width, name)}, {}, name + ".relu");
  }

  NodeId sum(std::vector<NodeId> terms, NodeId zero_like, const std::string& name) {
    if (terms.empty()) return g_.add_op(OpKind::zeros, {zero_like}, {}, name);
    if (terms.size() == 1) return terms.front();
    return g_.add_op(OpKind::add, std::move(terms), {}, name);
  }

  NodeId cell(const CellGenotype& genotype, NodeId in, const std::string& prefix) {
    std::array<NodeId, kCellNodes> node{in, -1, -1, -1};
    std::map<int, NodeId> relu_of;  // ReLU of a cell node, shared by its conv edges
    for (int to = 1; to < kCellNodes; ++to) {
      std::vector<NodeId> terms;
      for (int from = 0; from < to; ++from) {
        const EdgeOp op = genotype.edge(from, to);
        const NodeId src = node[static_cast<std::size_t>(from)];
        const std::string name = prefix + ".e" + std::to_string(from) + std::to_string(to);
        switch (op) {
          case EdgeOp::none: break;
          case EdgeOp::skip: terms.push_back(src); break;
          case EdgeOp::avgpool3x3: terms.push_back(g_.add_op(OpKind::avgpool3x3, {src}, {}, name)); break;
          case EdgeOp::conv1x1:
          case EdgeOp::conv3x3: {
            auto it = relu_of.find(from);
            if (it == relu_of.end())
              it = relu_of.emplace(from, g_.add_op(OpKind::relu, {src}, {}, prefix + ".n" + std::to_string(from) + ".relu")).first;
            terms.push_back(conv(op == EdgeOp::conv1x1 ? OpKind::conv1x1 : OpKind::conv3x3, it->second, bp_.width,
                                 name + "." + std::string(edge_op_name(op))));
            break;
          }
        }
      }
      node[static_cast<std::size_t>(to)] = sum(std::move(terms), in, prefix + ".n" + std::to_string(to));
    }
    return node[3];
  }

  NodeId chain(NodeId x) {
    if (bp_.cells.empty()) throw ContractError("chain blueprint has no cell genotype");
    if (bp_.input_shape.size() != 3) throw ContractError("chain blueprint needs [C, H, W] inputs");
    NodeId h = conv(OpKind::conv3x3, x, bp_.width, "stem");
    for (int c = 0; c < bp_.num_cells; ++c) {
      const CellGenotype& genotype = bp_.cells[static_cast<std::size_t>(c) % bp_.cells.size()];
      h = cell(genotype, h, "cell" + std::to_string(c + 1));
    }
    return g_.add_op(OpKind::global_avg_pool, {h}, {}, "gap");
  }

  NodeId generic_cell(NodeId in, const std::string& prefix) {
    const int layers = bp_.layers_per_cell;
    std::vector<NodeId> outs{in};
    for (int l = 1; l < layers; ++l) outs.push_back(block(outs.back(), prefix + ".l" + std::to_string(l)));
    NodeId last_in = outs.back();
    if (bp_.topology == Topology::highway) {
      last_in = g_.add_op(OpKind::add, {outs.front(), outs.back()}, {}, prefix + ".highway");
    } else if (bp_.topology == Topology::lookahead) {
      last_in = g_.add_op(OpKind::add, outs, {}, prefix + ".lookahead");
    }
    return block(last_in, prefix + ".l" + std::to_string(layers));
  }

  NodeId generic(NodeId x) {
    if (bp_.layers_per_cell < kMinLayersPerCell || bp_.layers_per_cell > kMaxLayersPerCell)
      throw ContractError("layers_per_cell must lie in [2, 11]");
    const NodeId stem = linear(x, bp_.width, "stem");
    std::vector<NodeId> cell_outs;
    NodeId h = stem;
    for (int c = 0; c < bp_.num_cells; ++c) {
      NodeId in = h;
      if (bp_.topology == Topology::dense && !cell_outs.empty()) {
        std::vector<NodeId> feeds{stem};
        feeds.insert(feeds.end(), cell_outs.begin(), cell_outs.end());
        in = g_.add_op(OpKind::add, feeds, {}, "cell" + std::to_string(c + 1) + ".in");
      }
      h = generic_cell(in, "cell" + std::to_string(c + 1));
      cell_outs.push_back(h);
    }
    return h;
  }

  NodeId mlp(NodeId x) {
    if (bp_.layers_per_cell < 0) throw ContractError("mlp depth must be >= 0");
    NodeId h = x;
    for (int l = 1; l <= bp_.layers_per_cell; ++l) h = block(h, "hidden" + std::to_string(l));
    return h;
  }

  void head(NodeId features) {
    if (bp_.head.kind == HeadKind::classifier) {
      if (bp_.head.classes < 2) throw ContractError("classifier head needs at least 2 classes");
      const NodeId logits = linear(features, bp_.head.classes, "head");
      g_.add_loss(OpKind::softmax_xent, logits);
      g_.set_output(logits);
    } else {
      const NodeId y = g_.add_op(OpKind::sum_output, {linear(features, 1, "head")}, {}, "sum");
      g_.add_loss(OpKind::mse, y);
      g_.set_output(y);
    }
  }

  const Blueprint& bp_;
  Graph g_;
};

}  // namespace

Graph lower(const Blueprint& blueprint) { return Builder(blueprint).build(); }

NetworkInstance instantiate(const Blueprint& blueprint, std::uint64_t seed) {
  NetworkInstance net{lower(blueprint), blueprint, seed};
  auto& params = net.graph.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = params[p];
    if (param.is_bias) {
      param.value.data().setZero();
      continue;
    }
    auto rng = make_rng(seed, Stream::init, {p});
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(param.fan_in)));
    for (Index i = 0; i < param.value.size(); ++i) param.value[i] = normal(rng);
  }
  return net;
}

void Batch::validate() const {
  if (size() < 2) throw ContractError("a batch needs at least 2 examples, got " + std::to_string(size()));
  if (targets.size() != size())
    throw ContractError("batch has " + std::to_string(size()) + " inputs but " + std::to_string(targets.size()) +
                        " targets");
}

Batch Batch::subset(const std::vector<Index>& rows) const {
  Batch b;
  b.inputs = inputs.gather(rows);
  b.targets = targets.gather(rows);
  b.kind = kind;
  return b;
}

std::string_view gradient_mode_name(GradientMode mode) { return mode == GradientMode::output ? "output" : "loss"; }

GradientMode parse_gradient_mode(std::string_view name) {
  if (name == "output") return GradientMode::output;
  if (name == "loss") return GradientMode::loss;
  throw ContractError("unknown gradient mode '" + std::string(name) + "' (expected output|loss)");
}

std::vector<std::pair<Index, Index>> parameter_columns(const Graph& graph) {
  std::vector<std::pair<Index, Index>> cols;
  Index at = 0;
  for (const auto& p : graph.parameters()) {
    cols.emplace_back(at, at + p.value.size());
    at += p.value.size();
  }
  return cols;
}

Eigen::MatrixXd per_example_output_grads(NetworkInstance& net, const Batch& batch, GradientMode mode) {
  batch.validate();
  Graph& g = net.graph;
  const Index n = batch.size();
  Eigen::MatrixXd rows(n, g.parameter_count());
  for (Index i = 0; i < n; ++i) {
    const Tensor x = batch.inputs.slice(i, 1);
    const Tensor t = batch.targets.slice(i, 1);
    GradientMap grads;
    if (mode == GradientMode::loss) {
      g.forward(x, t);
      grads = g.backward();
    } else {
      const Tensor y = g.forward(x);
      if (y.size() == 1) {
        grads = g.backward();
      } else if (batch.kind == TargetKind::class_index && y.rank() == 2) {
        Tensor seed(y.shape(), 0.0);
        const double cls = t[0];
        if (cls < 0 || cls >= y.dim(1) || cls != std::floor(cls))
          throw ContractError("target " + std::to_string(cls) + " is not a class index of the head");
        seed[static_cast<Index>(cls)] = 1.0;
        grads = g.backward(seed);
      } else {
        throw ContractError("output mode needs one scalar per example; head produced " + shape_string(y.shape()));
      }
    }
    rows.row(i) = flatten(grads).transpose();
  }
  return rows;
}

}  // namespace knas
