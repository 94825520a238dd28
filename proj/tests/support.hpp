#pragma once

#include "knas/graph.hpp"
#include "knas/netbuild.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace knas::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

inline Eigen::MatrixXd random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// Central differences of f over every parameter element, independent of the
// library's own checker.
inline Eigen::VectorXd numeric_param_grad(Graph& g, const std::function<double()>& f, double step = 1e-5) {
  Eigen::VectorXd out(g.parameter_count());
  Index at = 0;
  for (auto& p : g.parameters()) {
    for (Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double up = f();
      p.value[i] = saved - step;
      const double down = f();
      p.value[i] = saved;
      out[at++] = (up - down) / (2.0 * step);
    }
  }
  return out;
}

// Largest elementwise relative error between analytic and numeric gradients,
// ignoring entries where both are below an absolute floor.
inline double max_rel_err(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double floor = 1e-7) {
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) < floor && std::abs(numeric[i]) < floor) continue;
    worst = std::max(worst, rel_err(analytic[i], numeric[i]));
  }
  return worst;
}

// Smallest |pre-activation| feeding any relu in the last forward.
inline double min_relu_margin(const Graph& g) {
  double margin = INFINITY;
  for (NodeId id = 0; id < static_cast<NodeId>(g.nodes().size()); ++id) {
    const Node& n = g.nodes()[static_cast<std::size_t>(id)];
    if (n.kind != OpKind::relu) continue;
    const Tensor& in = g.value(n.inputs[0]);
    margin = std::min(margin, in.data().cwiseAbs().minCoeff());
  }
  return margin;
}

// Builds input -> op under test -> scalar, with trainable parameters both
// ahead of the op and (for losses) feeding it.
struct OpFixture {
  Graph g;
  Tensor input;
  Tensor targets;
  bool has_loss = false;

  double eval() { return has_loss ? g.forward(input, targets)[0] : g.forward(input).data().sum(); }
  Eigen::VectorXd analytic() {
    eval();
    if (has_loss) return flatten(g.backward());
    return flatten(g.backward(Tensor(g.value(g.output()).shape(), 1.0)));
  }
};

inline OpFixture make_fixture(OpKind kind, std::mt19937_64& rng) {
  OpFixture f;
  Graph& g = f.g;
  const int batch = 3, c = 2, h = 4, w = 4;
  std::uniform_int_distribution<int> cls(0, 2);
  auto conv_stem = [&](NodeId x) {
    const ParamId k = g.add_parameter("stem", random_tensor({c, c, 3, 3}, rng, 0.5), c * 9);
    return g.add_op(OpKind::conv3x3, {x}, {k});
  };
  switch (kind) {
    case OpKind::linear: {
      const NodeId x = g.add_input({c, h, w});
      const ParamId wt = g.add_parameter("w", random_tensor({3, c * h * w}, rng), c * h * w);
      const ParamId b = g.add_parameter("b", random_tensor({3}, rng), 0, true);
      g.add_op(OpKind::linear, {x}, {wt, b});
      f.input = random_tensor({batch, c, h, w}, rng);
      break;
    }
    case OpKind::conv1x1:
    case OpKind::conv3x3: {
      const int k = kind == OpKind::conv3x3 ? 3 : 1;
      const NodeId x = g.add_input({c, h, w});
      const ParamId wt = g.add_parameter("w", random_tensor({3, c, k, k}, rng), c * k * k);
      const ParamId b = g.add_parameter("b", random_tensor({3}, rng), 0, true);
      const NodeId y = g.add_op(kind, {x}, {wt, b});
      // a nonlinear read-out so the seed is not constant per position
      const ParamId r = g.add_parameter("r", random_tensor({2, 3 * h * w}, rng), 3 * h * w);
      g.add_op(OpKind::linear, {y}, {r});
      f.input = random_tensor({batch, c, h, w}, rng);
      break;
    }
    case OpKind::avgpool3x3:
    case OpKind::global_avg_pool: {
      const NodeId x = g.add_input({c, h, w});
      const NodeId y = g.add_op(kind, {conv_stem(x)});
      const Index feat = kind == OpKind::avgpool3x3 ? c * h * w : c;
      const ParamId r = g.add_parameter("r", random_tensor({2, static_cast<int>(feat)}, rng), static_cast<int>(feat));
      g.add_op(OpKind::linear, {y}, {r});
      f.input = random_tensor({batch, c, h, w}, rng);
      break;
    }
    case OpKind::relu: {
      const NodeId x = g.add_input({6});
      const ParamId w1 = g.add_parameter("w1", random_tensor({5, 6}, rng), 6);
      const NodeId a = g.add_op(OpKind::relu, {g.add_op(OpKind::linear, {x}, {w1})});
      const ParamId w2 = g.add_parameter("w2", random_tensor({2, 5}, rng), 5);
      g.add_op(OpKind::linear, {a}, {w2});
      f.input = random_tensor({batch, 6}, rng);
      break;
    }
    case OpKind::add: {
      const NodeId x = g.add_input({4});
      const ParamId w1 = g.add_parameter("w1", random_tensor({3, 4}, rng), 4);
      const ParamId w2 = g.add_parameter("w2", random_tensor({3, 4}, rng), 4);
      const NodeId a = g.add_op(OpKind::linear, {x}, {w1});
      const NodeId b = g.add_op(OpKind::linear, {x}, {w2});
      const NodeId s = g.add_op(OpKind::add, {a, b, a});
      const ParamId w3 = g.add_parameter("w3", random_tensor({2, 3}, rng), 3);
      g.add_op(OpKind::linear, {g.add_op(OpKind::relu, {s})}, {w3});
      f.input = random_tensor({batch, 4}, rng);
      break;
    }
    case OpKind::zeros: {
      const NodeId x = g.add_input({4});
      const ParamId w1 = g.add_parameter("w1", random_tensor({3, 4}, rng), 4);
      const NodeId a = g.add_op(OpKind::linear, {x}, {w1});
      const NodeId s = g.add_op(OpKind::add, {a, g.add_op(OpKind::zeros, {a})});
      g.add_op(OpKind::linear, {s}, {g.add_parameter("w2", random_tensor({2, 3}, rng), 3)});
      f.input = random_tensor({batch, 4}, rng);
      break;
    }
    case OpKind::sum_output: {
      const NodeId x = g.add_input({4});
      const ParamId w1 = g.add_parameter("w1", random_tensor({3, 4}, rng), 4);
      g.add_op(OpKind::sum_output, {g.add_op(OpKind::linear, {x}, {w1})});
      f.input = random_tensor({batch, 4}, rng);
      break;
    }
    case OpKind::softmax_xent: {
      const NodeId x = g.add_input({4});
      const ParamId w1 = g.add_parameter("w1", random_tensor({3, 4}, rng), 4);
      const ParamId b1 = g.add_parameter("b1", random_tensor({3}, rng), 0, true);
      g.add_loss(OpKind::softmax_xent, g.add_op(OpKind::linear, {x}, {w1, b1}));
      f.input = random_tensor({batch, 4}, rng);
      f.targets = Tensor({batch});
      for (int i = 0; i < batch; ++i) f.targets[i] = cls(rng);
      f.has_loss = true;
      break;
    }
    case OpKind::mse: {
      const NodeId x = g.add_input({4});
      const ParamId w1 = g.add_parameter("w1", random_tensor({1, 4}, rng), 4);
      g.add_loss(OpKind::mse, g.add_op(OpKind::sum_output, {g.add_op(OpKind::linear, {x}, {w1})}));
      f.input = random_tensor({batch, 4}, rng);
      f.targets = random_tensor({batch}, rng);
      f.has_loss = true;
      break;
    }
    default:
      break;
  }
  return f;
}

}  // namespace knas::test
