#include "doctest.h"
#include "support.hpp"

#include "knas/dataset.hpp"
#include "knas/errors.hpp"
#include "knas/trainer.hpp"

#include <Eigen/Cholesky>

#include <cmath>

using namespace knas;

namespace {

// Two Gaussian blobs at ±mu in d dimensions.
Dataset blobs(int n, int d, double separation, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.classes = 2;
  ds.inputs = Tensor({n, d});
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    ds.labels.push_back(label);
    for (int j = 0; j < d; ++j) ds.inputs.at({i, j}) = (label ? separation : -separation) / std::sqrt(double(d)) + normal(rng);
  }
  return ds;
}

// Logistic regression by Newton iterations, written out directly.
double logistic_accuracy(const Dataset& train, const Dataset& val) {
  const int n = static_cast<int>(train.size()), d = train.inputs.dim(1);
  Eigen::MatrixXd x(n, d + 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int j = 0; j < d; ++j) x(i, j + 1) = train.inputs.at({i, j});
    y[i] = train.labels[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
  for (int it = 0; it < 25; ++it) {
    const Eigen::VectorXd p = ((-(x * w).array()).exp() + 1.0).inverse().matrix();
    const Eigen::VectorXd grad = x.transpose() * (p - y) + 1e-3 * w;
    Eigen::MatrixXd hess = x.transpose() * (p.array() * (1 - p.array())).matrix().asDiagonal() * x;
    hess.diagonal().array() += 1e-3;
    w -= hess.ldlt().solve(grad);
  }
  int correct = 0;
  for (int i = 0; i < val.size(); ++i) {
    double z = w[0];
    for (int j = 0; j < d; ++j) z += w[j + 1] * val.inputs.at({i, j});
    correct += (z > 0) == (val.labels[static_cast<std::size_t>(i)] == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

NetworkInstance small_mlp(int d, int classes, std::uint64_t seed) {
  BlueprintOptions opts;
  opts.input_shape = {d};
  opts.head = {HeadKind::classifier, classes};
  Blueprint bp = make_blueprints(Topology::mlp, 16, {}, opts).front();
  bp.layers_per_cell = 1;
  return instantiate(bp, seed);
}

Candidate candidate(int index, double acc, double loss, bool diverged = false) {
  Candidate c;
  c.genotype = CellGenotype::from_index(index);
  c.curve.val_accuracy = {0.1, acc};
  c.curve.train_loss = {2.0, loss};
  c.curve.val_loss = {2.0, loss};
  c.curve.diverged = diverged;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("zero learning rate keeps the untrained accuracy") {
    std::mt19937_64 rng(1);
    const Dataset train = blobs(64, 4, 3.0, rng), val = blobs(64, 4, 3.0, rng);
    NetworkInstance net = small_mlp(4, 2, 3);
    const double untrained = evaluate(net, val).accuracy;
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.epochs = 3;
    const EvalCurve curve = short_train(net, train, val, cfg);
    REQUIRE(curve.val_accuracy.size() == 3u);
    for (double a : curve.val_accuracy) CHECK(a == untrained);
  }

  TEST_CASE("separable blobs are learned as well as logistic regression") {
    std::mt19937_64 rng(2);
    const Dataset train = blobs(200, 5, 6.0, rng), val = blobs(200, 5, 6.0, rng);
    REQUIRE(logistic_accuracy(train, val) >= 0.99);
    TrainConfig cfg;
    cfg.lr = 0.05;
    const EvalCurve curve = short_train(small_mlp(5, 2, 4), train, val, cfg);
    CHECK(curve.val_accuracy.size() == 20u);
    CHECK(curve.final_val_accuracy() >= 0.95);
    CHECK_FALSE(curve.diverged);
  }

  TEST_CASE("training is deterministic and leaves the input untouched") {
    std::mt19937_64 rng(3);
    const Dataset train = blobs(64, 4, 2.0, rng), val = blobs(32, 4, 2.0, rng);
    const NetworkInstance net = small_mlp(4, 2, 5);
    const Tensor before = net.graph.parameters()[0].value;
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.seed = 9;
    const EvalCurve a = short_train(net, train, val, cfg), b = short_train(net, train, val, cfg);
    CHECK(a == b);
    CHECK(net.graph.parameters()[0].value == before);
    for (double acc : a.val_accuracy) {
      CHECK(acc >= 0.0);
      CHECK(acc <= 1.0);
    }
    for (double l : a.train_loss) CHECK(std::isfinite(l));
  }

  TEST_CASE("divergence stops early and flags the curve") {
    std::mt19937_64 rng(4);
    const Dataset train = blobs(64, 4, 2.0, rng), val = blobs(32, 4, 2.0, rng);
    TrainConfig cfg;
    cfg.lr = 1e200;
    const EvalCurve curve = short_train(small_mlp(4, 2, 6), train, val, cfg);
    CHECK(curve.diverged);
    CHECK(curve.val_accuracy.size() < 20u);
  }

  TEST_CASE("objective must match the head") {
    std::mt19937_64 rng(5);
    const Dataset d = blobs(8, 4, 2.0, rng);
    TrainConfig cfg;
    cfg.objective = Objective::mse;
    CHECK_THROWS_AS(short_train(small_mlp(4, 2, 1), d, d, cfg), ContractError);
  }

  TEST_CASE("top1_select") {
    CHECK(top1_select({candidate(5, 0.5, 1.0)}).index() == 5);
    CHECK(top1_select({candidate(1, 0.8, 0.1), candidate(2, 0.9, 0.5)}).index() == 2);
    CHECK(top1_select({candidate(1, 0.9, 0.5), candidate(2, 0.9, 0.3)}).index() == 2);
    CHECK(top1_select({candidate(7, 0.9, 0.3), candidate(3, 0.9, 0.3)}).index() == 3);
    CHECK(top1_select({candidate(1, 0.99, 0.1, true), candidate(2, 0.5, 0.5)}).index() == 2);
    try {
      top1_select({candidate(1, 0.9, 0.1, true)});
      FAIL("expected no viable candidate");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("no viable candidate") != std::string::npos);
    }
    Candidate longer = candidate(4, 0.9, 0.1);
    longer.curve.val_accuracy.push_back(0.9);
    longer.curve.train_loss.push_back(0.1);
    CHECK_THROWS_AS(top1_select({candidate(1, 0.9, 0.1), longer}), ContractError);
  }
}
