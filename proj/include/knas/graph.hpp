#pragma once

#include "knas/tensor.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace knas {

// input and zeros are structural; the rest are differentiable operators.
enum class OpKind {
  input,
  zeros,
  linear,
  conv1x1,
  conv3x3,
  avgpool3x3,
  relu,
  add,
  global_avg_pool,
  sum_output,
  softmax_xent,
  mse,
};

std::string_view op_name(OpKind kind);

enum class Reduction { mean, sum };

using NodeId = int;
using ParamId = int;

struct Node {
  OpKind kind = OpKind::input;
  std::vector<NodeId> inputs;
  std::vector<ParamId> params;
  // Per-example output shape; empty means one scalar per example. Loss nodes
  // reduce over the batch and always produce a single element.
  Shape shape;
  Reduction reduction = Reduction::mean;
  std::string label;

  bool is_loss() const { return kind == OpKind::softmax_xent || kind == OpKind::mse; }
};

struct Parameter {
  std::string name;
  Tensor value;
  int fan_in = 0;
  bool is_bias = false;
};

// One gradient tensor per parameter, indexed by ParamId.
using GradientMap = std::vector<Tensor>;

Eigen::VectorXd flatten(const GradientMap& grads);

// Static computation graph. Nodes are appended in topological order: every
// input of a node must already exist when the node is added. Forward retains
// all activations so that a following backward can run in exact reverse order.
class Graph {
 public:
  NodeId add_input(Shape per_example);
  ParamId add_parameter(std::string name, Tensor value, int fan_in = 0, bool is_bias = false);
  NodeId add_op(OpKind kind, std::vector<NodeId> inputs, std::vector<ParamId> params = {},
                std::string label = {});
  NodeId add_loss(OpKind kind, NodeId prediction, Reduction reduction = Reduction::mean);

  void set_output(NodeId node);
  NodeId output() const;
  std::optional<NodeId> loss() const { return loss_; }

  // Evaluates through output(); input is [batch] + input_shape().
  Tensor forward(const Tensor& input);
  // Evaluates through loss() and returns the one-element loss.
  Tensor forward(const Tensor& input, const Tensor& targets);

  // Gradient of the last forward's one-element result.
  GradientMap backward();
  // Vector-Jacobian product: seed has the shape of the last forward's result.
  GradientMap backward(const Tensor& seed);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }
  Index parameter_count() const;
  const Shape& input_shape() const;

  // Kahn ordering over the node list; throws ContractError on a cycle.
  std::vector<NodeId> topological_order() const;

  // Activation retained from the last forward.
  const Tensor& value(NodeId node) const;

  std::string describe(NodeId node) const;

 private:
  Tensor run(const Tensor& input, const Tensor* targets, NodeId target);
  void eval_node(NodeId id, Index batch);
  void back_node(NodeId id, std::vector<Eigen::VectorXd>& dvals, GradientMap& grads) const;
  Shape infer_shape(OpKind kind, const std::vector<NodeId>& inputs, const std::vector<ParamId>& params,
                    const std::string& label) const;

  std::vector<Node> nodes_;
  std::vector<Parameter> params_;
  std::optional<NodeId> input_;
  std::optional<NodeId> output_;
  std::optional<NodeId> loss_;

  // forward state
  std::vector<Tensor> values_;
  std::vector<Eigen::VectorXd> saved_;
  Tensor targets_;
  NodeId evaluated_ = -1;
};

// Central-difference check over every parameter element. Returns the largest
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12). The graph output
// (or loss, when targets are given) must be a single element. Parameter values
// are restored before returning.
double grad_check(Graph& graph, const Tensor& input, double eps);
double grad_check(Graph& graph, const Tensor& input, const Tensor& targets, double eps);

}  // namespace knas
