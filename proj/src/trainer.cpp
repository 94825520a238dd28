#include "knas/trainer.hpp"

#include "knas/errors.hpp"
#include "knas/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace knas {

namespace {

void check_objective(const NetworkInstance& net, Objective objective) {
  const bool classifier = net.blueprint.head.kind == HeadKind::classifier;
  if (classifier != (objective == Objective::softmax_xent))
    throw ContractError("training objective " + std::string(objective_name(objective)) +
                        " does not match the network head");
}

Batch make_batch(const Dataset& data, const std::vector<Index>& rows, const NetworkInstance& net) {
  Batch b = data.batch(rows);
  if (net.blueprint.head.kind == HeadKind::scalar) b.kind = TargetKind::regression;
  return b;
}

}  // namespace

std::string_view objective_name(Objective o) { return o == Objective::softmax_xent ? "softmax_xent" : "mse"; }

Objective parse_objective(std::string_view name) {
  if (name == "softmax_xent") return Objective::softmax_xent;
  if (name == "mse") return Objective::mse;
  throw ContractError("unknown objective '" + std::string(name) + "' (expected softmax_xent|mse)");
}

double EvalCurve::final_val_accuracy() const {
  if (val_accuracy.empty()) throw ContractError("evaluation curve is empty");
  return val_accuracy.back();
}

double EvalCurve::final_train_loss() const {
  if (train_loss.empty()) throw ContractError("evaluation curve is empty");
  return train_loss.back();
}

Evaluation evaluate(NetworkInstance& net, const Dataset& data) {
  if (data.size() == 0) throw ContractError("cannot evaluate on an empty dataset");
  constexpr Index chunk = 128;
  Evaluation ev;
  Index correct = 0;
  double loss = 0.0;
  const bool classifier = net.blueprint.head.kind == HeadKind::classifier;
  for (Index start = 0; start < data.size(); start += chunk) {
    const Index count = std::min(chunk, data.size() - start);
    std::vector<Index> rows(static_cast<std::size_t>(count));
    std::iota(rows.begin(), rows.end(), start);
    const Batch b = make_batch(data, rows, net);
    loss += net.graph.forward(b.inputs, b.targets)[0] * static_cast<double>(count);
    const Tensor& out = net.graph.value(net.graph.output());
    for (Index i = 0; i < count; ++i) {
      const int label = data.labels[static_cast<std::size_t>(start + i)];
      if (classifier) {
        const Index k = out.size() / count;
        Index best = 0;
        out.data().segment(i * k, k).maxCoeff(&best);
        correct += best == label;
      } else {
        correct += std::lround(out[i]) == label;
      }
    }
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  ev.loss = loss / static_cast<double>(data.size());
  return ev;
}

EvalCurve short_train(const NetworkInstance& initial, const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr >= 0.0))
    throw ContractError("train config needs epochs >= 1, batch_size >= 1 and lr >= 0");
  if (train.size() == 0 || val.size() == 0) throw ContractError("training and validation data must be non-empty");
  check_objective(initial, cfg.objective);

  const auto start = std::chrono::steady_clock::now();
  NetworkInstance net = initial;
  auto& params = net.graph.parameters();
  EvalCurve curve;
  std::vector<Index> order(static_cast<std::size_t>(train.size()));
  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), Index{0});
      auto rng = make_rng(cfg.seed, Stream::training, {static_cast<std::uint64_t>(epoch)});
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
        const std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(at),
                                      order.begin() + static_cast<std::ptrdiff_t>(end));
        const Batch b = make_batch(train, rows, net);
        const double loss = net.graph.forward(b.inputs, b.targets)[0];
        const GradientMap grads = net.graph.backward();
        for (std::size_t p = 0; p < params.size(); ++p) params[p].value.data() -= cfg.lr * grads[p].data();
        loss_sum += loss * static_cast<double>(rows.size());
      }
      const double epoch_loss = loss_sum / static_cast<double>(train.size());
      if (!std::isfinite(epoch_loss)) throw NumericError("training loss is not finite");
      const Evaluation ev = evaluate(net, val);
      curve.train_loss.push_back(epoch_loss);
      curve.val_accuracy.push_back(ev.accuracy);
      curve.val_loss.push_back(ev.loss);
    }
  } catch (const NumericError&) {
    curve.diverged = true;
  }
  curve.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return curve;
}

CellGenotype top1_select(const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw ContractError("top1_select needs at least one candidate");
  const Candidate* best = nullptr;
  std::size_t length = 0;
  for (const Candidate& c : candidates) {
    if (c.curve.diverged || c.curve.val_accuracy.empty()) continue;
    if (best && c.curve.val_accuracy.size() != length)
      throw ContractError("top1_select: candidate curves have different lengths");
    length = c.curve.val_accuracy.size();
    if (!best) {
      best = &c;
      continue;
    }
    const double acc = c.curve.final_val_accuracy(), best_acc = best->curve.final_val_accuracy();
    const double loss = c.curve.final_train_loss(), best_loss = best->curve.final_train_loss();
    if (acc > best_acc || (acc == best_acc && (loss < best_loss || (loss == best_loss &&
                                                                     c.genotype.index() < best->genotype.index()))))
      best = &c;
  }
  if (!best) throw ContractError("no viable candidate: every candidate diverged");
  return best->genotype;
}

}  // namespace knas
