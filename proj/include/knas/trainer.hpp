#pragma once

#include "knas/archspace.hpp"
#include "knas/dataset.hpp"
#include "knas/netbuild.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace knas {

enum class Objective { softmax_xent, mse };

std::string_view objective_name(Objective o);
Objective parse_objective(std::string_view name);

struct TrainConfig {
  int epochs = 20;
  double lr = 0.005;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Objective objective = Objective::softmax_xent;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EvalCurve {
  std::vector<double> train_loss;    // mean minibatch loss per epoch
  std::vector<double> val_accuracy;  // after each epoch
  std::vector<double> val_loss;
  double wall_time = 0.0;
  bool diverged = false;

  double final_val_accuracy() const;
  double final_train_loss() const;

  friend bool operator==(const EvalCurve& a, const EvalCurve& b) {
    return a.train_loss == b.train_loss && a.val_accuracy == b.val_accuracy && a.val_loss == b.val_loss &&
           a.diverged == b.diverged;
  }
};

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Accuracy and mean loss over a dataset. A scalar (mse) head counts an
// example as correct when its prediction rounds to the label.
Evaluation evaluate(NetworkInstance& net, const Dataset& data);

// Plain minibatch SGD on a copy of net; net itself is left untouched.
// Deterministic for a fixed (net, data, cfg). A non-finite loss stops
// training early and returns the partial curve flagged as diverged.
EvalCurve short_train(const NetworkInstance& net, const Dataset& train, const Dataset& val, const TrainConfig& cfg);

struct Candidate {
  CellGenotype genotype;
  EvalCurve curve;
};

// Highest final validation accuracy; ties go to the lower final train loss,
// then to the lower canonical genotype index. Diverged candidates are skipped.
CellGenotype top1_select(const std::vector<Candidate>& candidates);

}  // namespace knas
