#pragma once

#include "knas/archspace.hpp"
#include "knas/graph.hpp"

#include <Eigen/Core>

#include <cstdint>

namespace knas {

// Builds the graph for a blueprint with zero-valued parameters. The graph's
// output is the model output (logits or one scalar per example) and its loss
// node is softmax_xent (classifier head) or mse (scalar head), mean-reduced.
Graph lower(const Blueprint& blueprint);

struct NetworkInstance {
  Graph graph;
  Blueprint blueprint;
  std::uint64_t seed = 0;

  Index parameter_count() const { return graph.parameter_count(); }
};

// Weights ~ N(0, 2 / fan_in) per tensor, biases zero; bitwise reproducible
// for a given (blueprint, seed).
NetworkInstance instantiate(const Blueprint& blueprint, std::uint64_t seed);

enum class TargetKind { class_index, regression };

struct Batch {
  Tensor inputs;   // [n, ...]
  Tensor targets;  // [n]
  TargetKind kind = TargetKind::class_index;

  Index size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  // Throws ContractError unless n >= 2 and targets line up with inputs.
  void validate() const;
  Batch subset(const std::vector<Index>& rows) const;
};

enum class GradientMode { output, loss };

std::string_view gradient_mode_name(GradientMode mode);
GradientMode parse_gradient_mode(std::string_view name);

// Row i is the flattened gradient, over all parameters, of example i's scalar
// output (output mode) or of example i's loss (loss mode), each from its own
// backward pass. For a classifier head the output-mode scalar is the target
// class logit. Overwrites the graph's retained activations.
Eigen::MatrixXd per_example_output_grads(NetworkInstance& net, const Batch& batch, GradientMode mode);

// [begin, end) column ranges of each parameter tensor inside a gradient row.
std::vector<std::pair<Index, Index>> parameter_columns(const Graph& graph);

}  // namespace knas
