#include "knas/graph.hpp"

#include "knas/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>

namespace knas {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

Shape batched(Index batch, const Shape& per_example) {
  Shape s;
  s.reserve(per_example.size() + 1);
  s.push_back(static_cast<int>(batch));
  s.insert(s.end(), per_example.begin(), per_example.end());
  return s;
}

int kernel_of(OpKind kind) { return kind == OpKind::conv3x3 ? 3 : 1; }

// cols[(c*9 + ky*3 + kx), y*w + x] = x[c, y+ky-1, x+kx-1], zero outside.
void im2col3(const double* x, int channels, int h, int w, double* cols) {
  const int hw = h * w;
  for (int c = 0; c < channels; ++c) {
    const double* xc = x + static_cast<Index>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = cols + (static_cast<Index>(c) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            row[y * w + xx] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? xc[sy * w + sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im3(const double* cols, int channels, int h, int w, double* dx) {
  const int hw = h * w;
  for (int c = 0; c < channels; ++c) {
    double* dc = dx + static_cast<Index>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = cols + (static_cast<Index>(c) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - 1;
            if (sx >= 0 && sx < w) dc[sy * w + sx] += row[y * w + xx];
          }
        }
      }
    }
  }
}

// 3x3 window sum with zero padding, divided by 9 (count-include-pad). The
// operator is self-adjoint, so backward reuses it.
void box3(const double* x, int channels, int h, int w, double* out) {
  const int hw = h * w;
  for (int c = 0; c < channels; ++c) {
    const double* xc = x + static_cast<Index>(c) * hw;
    double* oc = out + static_cast<Index>(c) * hw;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int sy = std::max(0, y - 1); sy <= std::min(h - 1, y + 1); ++sy)
          for (int sx = std::max(0, xx - 1); sx <= std::min(w - 1, xx + 1); ++sx) s += xc[sy * w + sx];
        oc[y * w + xx] = s / 9.0;
      }
    }
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::zeros: return "zeros";
    case OpKind::linear: return "linear";
    case OpKind::conv1x1: return "conv1x1";
    case OpKind::conv3x3: return "conv3x3";
    case OpKind::avgpool3x3: return "avgpool3x3";
    case OpKind::relu: return "relu";
    case OpKind::add: return "add";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::sum_output: return "sum_output";
    case OpKind::softmax_xent: return "softmax_xent";
    case OpKind::mse: return "mse";
  }
  return "?";
}

Eigen::VectorXd flatten(const GradientMap& grads) {
  Index total = 0;
  for (const auto& g : grads) total += g.size();
  Eigen::VectorXd out(total);
  Index at = 0;
  for (const auto& g : grads) {
    out.segment(at, g.size()) = g.data();
    at += g.size();
  }
  return out;
}

std::string Graph::describe(NodeId node) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(node));
  std::string s = "node " + std::to_string(node) + " (" + std::string(op_name(n.kind));
  if (!n.label.empty()) s += " '" + n.label + "'";
  return s + ")";
}

NodeId Graph::add_input(Shape per_example) {
  if (input_) throw ContractError("graph already has an input node");
  shape_size(per_example);
  Node n;
  n.kind = OpKind::input;
  n.shape = std::move(per_example);
  n.label = "input";
  nodes_.push_back(std::move(n));
  input_ = static_cast<NodeId>(nodes_.size() - 1);
  return *input_;
}

ParamId Graph::add_parameter(std::string name, Tensor value, int fan_in, bool is_bias) {
  value.requires_grad = true;
  params_.push_back(Parameter{std::move(name), std::move(value), fan_in, is_bias});
  return static_cast<ParamId>(params_.size() - 1);
}

Shape Graph::infer_shape(OpKind kind, const std::vector<NodeId>& inputs, const std::vector<ParamId>& params,
                         const std::string& label) const {
  const NodeId self = static_cast<NodeId>(nodes_.size());
  auto fail = [&](const std::string& why) -> ShapeError {
    std::string who = "node " + std::to_string(self) + " (" + std::string(op_name(kind));
    if (!label.empty()) who += " '" + label + "'";
    return ShapeError(who + "): " + why);
  };
  for (NodeId in : inputs) {
    if (in < 0 || in >= self)
      throw ContractError("node " + std::to_string(self) + " references node " + std::to_string(in) +
                          ", which does not precede it (graph must be acyclic and topologically ordered)");
    if (nodes_[static_cast<std::size_t>(in)].is_loss()) throw fail("a loss node cannot feed another node");
  }
  for (ParamId p : params)
    if (p < 0 || p >= static_cast<ParamId>(params_.size())) throw fail("unknown parameter id " + std::to_string(p));

  auto in_shape = [&](std::size_t k) -> const Shape& { return nodes_[static_cast<std::size_t>(inputs[k])].shape; };
  auto want_inputs = [&](std::size_t count) {
    if (inputs.size() != count) throw fail("expects " + std::to_string(count) + " input(s)");
  };
  auto check_bias = [&](int out) {
    if (params.size() == 2) {
      const Tensor& b = params_[static_cast<std::size_t>(params[1])].value;
      if (b.shape() != Shape{out}) throw fail("bias shape " + shape_string(b.shape()) + " != [" + std::to_string(out) + "]");
    } else if (params.size() != 1) {
      throw fail("expects a weight and an optional bias");
    }
  };

  switch (kind) {
    case OpKind::input:
      throw ContractError("use add_input for the input node");
    case OpKind::zeros:
      want_inputs(1);
      return in_shape(0);
    case OpKind::linear: {
      want_inputs(1);
      if (params.empty()) throw fail("missing weight");
      const Tensor& w = params_[static_cast<std::size_t>(params[0])].value;
      const Index features = in_shape(0).empty() ? 1 : shape_size(in_shape(0));
      if (w.rank() != 2 || w.dim(1) != features)
        throw fail("weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(in_shape(0)));
      check_bias(w.dim(0));
      return {w.dim(0)};
    }
    case OpKind::conv1x1:
    case OpKind::conv3x3: {
      want_inputs(1);
      if (params.empty()) throw fail("missing weight");
      const Shape& s = in_shape(0);
      if (s.size() != 3) throw fail("expects [C, H, W] input, got " + shape_string(s));
      const Tensor& w = params_[static_cast<std::size_t>(params[0])].value;
      const int k = kernel_of(kind);
      if (w.shape() != Shape{w.dim(0), s[0], k, k})
        throw fail("weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(s));
      check_bias(w.dim(0));
      return {w.dim(0), s[1], s[2]};
    }
    case OpKind::avgpool3x3:
    case OpKind::global_avg_pool: {
      want_inputs(1);
      if (!params.empty()) throw fail("takes no parameters");
      const Shape& s = in_shape(0);
      if (s.size() != 3) throw fail("expects [C, H, W] input, got " + shape_string(s));
      return kind == OpKind::avgpool3x3 ? s : Shape{s[0]};
    }
    case OpKind::relu:
      want_inputs(1);
      return in_shape(0);
    case OpKind::add: {
      if (inputs.empty()) throw fail("expects at least one input");
      for (std::size_t k = 1; k < inputs.size(); ++k)
        if (in_shape(k) != in_shape(0))
          throw fail("operand shapes differ: " + shape_string(in_shape(0)) + " vs " + shape_string(in_shape(k)));
      return in_shape(0);
    }
    case OpKind::sum_output:
      want_inputs(1);
      return {};
    case OpKind::softmax_xent:
      want_inputs(1);
      if (in_shape(0).size() != 1) throw fail("expects [K] logits per example");
      return {};
    case OpKind::mse:
      want_inputs(1);
      if (!(in_shape(0).empty() || in_shape(0) == Shape{1})) throw fail("expects one prediction per example");
      return {};
  }
  throw fail("unknown op");
}

NodeId Graph::add_op(OpKind kind, std::vector<NodeId> inputs, std::vector<ParamId> params, std::string label) {
  if (kind == OpKind::softmax_xent || kind == OpKind::mse) throw ContractError("use add_loss for loss operators");
  Node n;
  n.shape = infer_shape(kind, inputs, params, label);
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.params = std::move(params);
  n.label = std::move(label);
  nodes_.push_back(std::move(n));
  output_ = static_cast<NodeId>(nodes_.size() - 1);
  return *output_;
}

NodeId Graph::add_loss(OpKind kind, NodeId prediction, Reduction reduction) {
  if (kind != OpKind::softmax_xent && kind != OpKind::mse) throw ContractError("not a loss operator");
  if (loss_) throw ContractError("graph already has a loss node");
  Node n;
  n.shape = infer_shape(kind, {prediction}, {}, {});
  n.kind = kind;
  n.inputs = {prediction};
  n.reduction = reduction;
  n.label = "loss";
  nodes_.push_back(std::move(n));
  loss_ = static_cast<NodeId>(nodes_.size() - 1);
  return *loss_;
}

void Graph::set_output(NodeId node) {
  if (node < 0 || node >= static_cast<NodeId>(nodes_.size()) || nodes_[static_cast<std::size_t>(node)].is_loss())
    throw ContractError("output must be an existing non-loss node");
  output_ = node;
}

NodeId Graph::output() const {
  if (!output_) throw StateError("graph has no output node");
  return *output_;
}

Index Graph::parameter_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

const Shape& Graph::input_shape() const {
  if (!input_) throw StateError("graph has no input node");
  return nodes_[static_cast<std::size_t>(*input_)].shape;
}

std::vector<NodeId> Graph::topological_order() const {
  const std::size_t n = nodes_.size();
  std::vector<int> indegree(n, 0);
  std::vector<std::vector<NodeId>> consumers(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (NodeId in : nodes_[i].inputs) {
      if (in < 0 || static_cast<std::size_t>(in) >= n) throw ContractError("dangling edge into " + describe(static_cast<NodeId>(i)));
      consumers[static_cast<std::size_t>(in)].push_back(static_cast<NodeId>(i));
      ++indegree[i];
    }
  }
  std::deque<NodeId> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push_back(static_cast<NodeId>(i));
  std::vector<NodeId> order;
  order.reserve(n);
  while (!ready.empty()) {
    NodeId v = ready.front();
    ready.pop_front();
    order.push_back(v);
    for (NodeId c : consumers[static_cast<std::size_t>(v)])
      if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
  }
  if (order.size() != n) throw ContractError("graph contains a cycle");
  return order;
}

const Tensor& Graph::value(NodeId node) const {
  if (node < 0 || node > evaluated_) throw StateError("node " + std::to_string(node) + " has not been evaluated");
  return values_[static_cast<std::size_t>(node)];
}

Tensor Graph::forward(const Tensor& input) { return run(input, nullptr, output()); }

Tensor Graph::forward(const Tensor& input, const Tensor& targets) {
  if (!loss_) throw StateError("graph has no loss node");
  return run(input, &targets, *loss_);
}

Tensor Graph::run(const Tensor& input, const Tensor* targets, NodeId target) {
  if (!input_) throw StateError("graph has no input node");
  const Shape& want = input_shape();
  if (input.rank() != static_cast<int>(want.size()) + 1 ||
      !std::equal(want.begin(), want.end(), input.shape().begin() + 1))
    throw ShapeError(describe(*input_) + ": expected [batch] + " + shape_string(want) + ", got " +
                     shape_string(input.shape()));
  const Index batch = input.dim(0);
  if (targets) {
    if (targets->size() != batch)
      throw ShapeError(describe(target) + ": " + std::to_string(targets->size()) + " targets for batch of " +
                       std::to_string(batch));
    targets_ = *targets;
  }
  evaluated_ = -1;
  values_.assign(static_cast<std::size_t>(target) + 1, Tensor());
  saved_.assign(static_cast<std::size_t>(target) + 1, Eigen::VectorXd());
  values_[static_cast<std::size_t>(*input_)] = input;
  for (NodeId id = 0; id <= target; ++id) {
    if (id != *input_) eval_node(id, batch);
    if (!values_[static_cast<std::size_t>(id)].all_finite())
      throw NumericError("non-finite value produced at " + describe(id), id);
    evaluated_ = id;
  }
  return values_[static_cast<std::size_t>(target)];
}

void Graph::eval_node(NodeId id, Index batch) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  auto in = [&](std::size_t k) -> const Tensor& { return values_[static_cast<std::size_t>(n.inputs[k])]; };
  auto param = [&](std::size_t k) -> const Tensor& { return params_[static_cast<std::size_t>(n.params[k])].value; };
  Tensor& out = values_[static_cast<std::size_t>(id)];

  switch (n.kind) {
    case OpKind::input:
      break;
    case OpKind::zeros:
      out = Tensor(batched(batch, n.shape), 0.0);
      break;
    case OpKind::linear: {
      const Tensor& w = param(0);
      const Index features = w.dim(1);
      ConstRowMap x(in(0).data().data(), batch, features);
      ConstRowMap wm(w.data().data(), w.dim(0), features);
      out = Tensor(batched(batch, n.shape));
      RowMap y(out.data().data(), batch, w.dim(0));
      y.noalias() = x * wm.transpose();
      if (n.params.size() == 2) y.rowwise() += param(1).data().transpose();
      break;
    }
    case OpKind::conv1x1:
    case OpKind::conv3x3: {
      const Shape& s = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
      const int c = s[0], h = s[1], w = s[2], hw = h * w;
      const int k2 = kernel_of(n.kind) * kernel_of(n.kind);
      const Tensor& wt = param(0);
      const int o = wt.dim(0);
      ConstRowMap wm(wt.data().data(), o, static_cast<Index>(c) * k2);
      out = Tensor(batched(batch, n.shape));
      const Index col_size = static_cast<Index>(c) * k2 * hw;
      if (n.kind == OpKind::conv3x3) saved_[static_cast<std::size_t>(id)].resize(batch * col_size);
      for (Index b = 0; b < batch; ++b) {
        const double* xb = in(0).data().data() + b * static_cast<Index>(c) * hw;
        const double* cols = xb;
        if (n.kind == OpKind::conv3x3) {
          double* buf = saved_[static_cast<std::size_t>(id)].data() + b * col_size;
          im2col3(xb, c, h, w, buf);
          cols = buf;
        }
        ConstRowMap cm(cols, static_cast<Index>(c) * k2, hw);
        RowMap y(out.data().data() + b * static_cast<Index>(o) * hw, o, hw);
        y.noalias() = wm * cm;
        if (n.params.size() == 2) y.colwise() += param(1).data();
      }
      break;
    }
    case OpKind::avgpool3x3: {
      const Shape& s = n.shape;
      out = Tensor(batched(batch, n.shape));
      box3(in(0).data().data(), static_cast<int>(batch) * s[0], s[1], s[2], out.data().data());
      break;
    }
    case OpKind::relu:
      out = Tensor(in(0).shape(), in(0).data().cwiseMax(0.0));
      break;
    case OpKind::add: {
      out = in(0);
      out.requires_grad = false;
      out.grad.reset();
      for (std::size_t k = 1; k < n.inputs.size(); ++k) out.data() += in(k).data();
      break;
    }
    case OpKind::global_avg_pool: {
      const Shape& s = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
      const Index hw = static_cast<Index>(s[1]) * s[2];
      ConstRowMap x(in(0).data().data(), batch * s[0], hw);
      out = Tensor(batched(batch, n.shape), Eigen::VectorXd(x.rowwise().mean()));
      break;
    }
    case OpKind::sum_output: {
      const Index per = in(0).size() / batch;
      ConstRowMap x(in(0).data().data(), batch, per);
      out = Tensor(batched(batch, n.shape), Eigen::VectorXd(x.rowwise().sum()));
      break;
    }
    case OpKind::softmax_xent: {
      const Index k = in(0).size() / batch;
      ConstRowMap z(in(0).data().data(), batch, k);
      Eigen::VectorXd& probs = saved_[static_cast<std::size_t>(id)];
      probs.resize(batch * k);
      RowMap p(probs.data(), batch, k);
      double total = 0.0;
      for (Index b = 0; b < batch; ++b) {
        const double t = targets_[b];
        const Index cls = static_cast<Index>(t);
        if (cls < 0 || cls >= k || static_cast<double>(cls) != t)
          throw ContractError(describe(id) + ": target " + std::to_string(t) + " is not a class index in [0, " +
                              std::to_string(k) + ")");
        const double mx = z.row(b).maxCoeff();
        p.row(b) = (z.row(b).array() - mx).exp();
        const double norm = p.row(b).sum();
        p.row(b) /= norm;
        total += (std::log(norm) + mx) - z(b, cls);
      }
      if (n.reduction == Reduction::mean) total /= static_cast<double>(batch);
      out = Tensor({1}, {total});
      break;
    }
    case OpKind::mse: {
      const Eigen::VectorXd r = in(0).data() - targets_.data();
      double total = 0.5 * r.squaredNorm();
      if (n.reduction == Reduction::mean) total /= static_cast<double>(batch);
      out = Tensor({1}, {total});
      break;
    }
  }
}

GradientMap Graph::backward() {
  if (evaluated_ < 0) throw StateError("backward called before forward");
  const Tensor& result = values_[static_cast<std::size_t>(evaluated_)];
  if (result.size() != 1)
    throw ContractError("backward() needs a one-element output; " + describe(evaluated_) + " produced " +
                        shape_string(result.shape()) + " (pass a seed instead)");
  return backward(Tensor(result.shape(), 1.0));
}

GradientMap Graph::backward(const Tensor& seed) {
  if (evaluated_ < 0) throw StateError("backward called before forward");
  const NodeId top = evaluated_;
  if (seed.shape() != values_[static_cast<std::size_t>(top)].shape())
    throw ShapeError("backward seed shape " + shape_string(seed.shape()) + " does not match " + describe(top) +
                     " output " + shape_string(values_[static_cast<std::size_t>(top)].shape()));

  GradientMap grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.value.shape(), 0.0);

  std::vector<Eigen::VectorXd> dvals(static_cast<std::size_t>(top) + 1);
  dvals[static_cast<std::size_t>(top)] = seed.data();
  for (NodeId id = top; id >= 0; --id) {
    if (dvals[static_cast<std::size_t>(id)].size() == 0) continue;
    back_node(id, dvals, grads);
    dvals[static_cast<std::size_t>(id)] = Eigen::VectorXd();
  }
  for (std::size_t p = 0; p < params_.size(); ++p) {
    if (!grads[p].all_finite()) throw NumericError("non-finite gradient for parameter '" + params_[p].name + "'");
    params_[p].value.grad = grads[p].data();
  }
  return grads;
}

void Graph::back_node(NodeId id, std::vector<Eigen::VectorXd>& dvals, GradientMap& grads) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const Eigen::VectorXd& dy = dvals[static_cast<std::size_t>(id)];
  const Index batch = values_[static_cast<std::size_t>(n.inputs.empty() ? id : n.inputs[0])].dim(0);
  auto in = [&](std::size_t k) -> const Tensor& { return values_[static_cast<std::size_t>(n.inputs[k])]; };
  auto param = [&](std::size_t k) -> const Tensor& { return params_[static_cast<std::size_t>(n.params[k])].value; };
  auto accum = [&](std::size_t k) -> Eigen::VectorXd& {
    Eigen::VectorXd& d = dvals[static_cast<std::size_t>(n.inputs[k])];
    if (d.size() == 0) d = Eigen::VectorXd::Zero(in(k).size());
    return d;
  };

  switch (n.kind) {
    case OpKind::input:
    case OpKind::zeros:
      break;
    case OpKind::linear: {
      const Tensor& w = param(0);
      const Index features = w.dim(1), outs = w.dim(0);
      ConstRowMap x(in(0).data().data(), batch, features);
      ConstRowMap dym(dy.data(), batch, outs);
      ConstRowMap wm(w.data().data(), outs, features);
      RowMap dw(grads[static_cast<std::size_t>(n.params[0])].data().data(), outs, features);
      dw.noalias() += dym.transpose() * x;
      if (n.params.size() == 2) grads[static_cast<std::size_t>(n.params[1])].data() += dym.colwise().sum().transpose();
      Eigen::VectorXd& dx = accum(0);
      RowMap dxm(dx.data(), batch, features);
      dxm.noalias() += dym * wm;
      break;
    }
    case OpKind::conv1x1:
    case OpKind::conv3x3: {
      const Shape& s = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
      const int c = s[0], h = s[1], w = s[2], hw = h * w;
      const int k2 = kernel_of(n.kind) * kernel_of(n.kind);
      const Tensor& wt = param(0);
      const int o = wt.dim(0);
      const Index ck = static_cast<Index>(c) * k2;
      ConstRowMap wm(wt.data().data(), o, ck);
      RowMap dw(grads[static_cast<std::size_t>(n.params[0])].data().data(), o, ck);
      Eigen::VectorXd& dx = accum(0);
      RowMat dcols(ck, hw);
      for (Index b = 0; b < batch; ++b) {
        ConstRowMap dyb(dy.data() + b * static_cast<Index>(o) * hw, o, hw);
        const double* cols = n.kind == OpKind::conv3x3
                                 ? saved_[static_cast<std::size_t>(id)].data() + b * ck * hw
                                 : in(0).data().data() + b * static_cast<Index>(c) * hw;
        ConstRowMap cm(cols, ck, hw);
        dw.noalias() += dyb * cm.transpose();
        if (n.params.size() == 2) grads[static_cast<std::size_t>(n.params[1])].data() += dyb.rowwise().sum();
        double* dxb = dx.data() + b * static_cast<Index>(c) * hw;
        if (n.kind == OpKind::conv3x3) {
          dcols.noalias() = wm.transpose() * dyb;
          col2im3(dcols.data(), c, h, w, dxb);
        } else {
          RowMap dxm(dxb, c, hw);
          dxm.noalias() += wm.transpose() * dyb;
        }
      }
      break;
    }
    case OpKind::avgpool3x3: {
      const Shape& s = n.shape;
      Eigen::VectorXd tmp(dy.size());
      box3(dy.data(), static_cast<int>(batch) * s[0], s[1], s[2], tmp.data());
      accum(0) += tmp;
      break;
    }
    case OpKind::relu: {
      // subgradient at 0 is 0
      accum(0) += (in(0).data().array() > 0.0).select(dy, 0.0);
      break;
    }
    case OpKind::add:
      for (std::size_t k = 0; k < n.inputs.size(); ++k) accum(k) += dy;
      break;
    case OpKind::global_avg_pool: {
      const Shape& s = nodes_[static_cast<std::size_t>(n.inputs[0])].shape;
      const Index hw = static_cast<Index>(s[1]) * s[2];
      RowMap dx(accum(0).data(), batch * s[0], hw);
      dx.colwise() += dy / static_cast<double>(hw);
      break;
    }
    case OpKind::sum_output: {
      const Index per = in(0).size() / batch;
      RowMap dx(accum(0).data(), batch, per);
      dx.colwise() += dy;
      break;
    }
    case OpKind::softmax_xent: {
      const Index k = in(0).size() / batch;
      double scale = dy[0];
      if (n.reduction == Reduction::mean) scale /= static_cast<double>(batch);
      Eigen::VectorXd g = saved_[static_cast<std::size_t>(id)];
      for (Index b = 0; b < batch; ++b) g[b * k + static_cast<Index>(targets_[b])] -= 1.0;
      accum(0) += scale * g;
      break;
    }
    case OpKind::mse: {
      double scale = dy[0];
      if (n.reduction == Reduction::mean) scale /= static_cast<double>(batch);
      accum(0) += scale * (in(0).data() - targets_.data());
      break;
    }
  }
}

namespace {

double check(Graph& graph, double eps, const std::function<double()>& eval) {
  if (!(eps > 0.0)) throw ContractError("grad_check needs eps > 0, got " + std::to_string(eps));
  eval();
  const GradientMap analytic = graph.backward();
  double worst = 0.0;
  auto& params = graph.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::VectorXd& w = params[p].value.data();
    for (Index i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double up = eval();
      w[i] = saved - eps;
      const double down = eval();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double scalar_of(const Tensor& t) {
  if (t.size() != 1) throw ContractError("grad_check needs a one-element output, got " + shape_string(t.shape()));
  return t.data()[0];
}

}  // namespace

double grad_check(Graph& graph, const Tensor& input, double eps) {
  return check(graph, eps, [&] { return scalar_of(graph.forward(input)); });
}

double grad_check(Graph& graph, const Tensor& input, const Tensor& targets, double eps) {
  return check(graph, eps, [&] { return scalar_of(graph.forward(input, targets)); });
}

}  // namespace knas
