#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

#include "knas/archspace.hpp"
#include "knas/convergence.hpp"
#include "knas/errors.hpp"

#include <cmath>

using namespace knas;
using knas::test::random_tensor;

namespace {

struct LinearFixture {
  NetworkInstance net;
  Batch batch;
  Eigen::MatrixXd x;
  Eigen::VectorXd y0;
};

LinearFixture linear_fixture(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BlueprintOptions opts;
  opts.input_shape = {d};
  opts.head = {HeadKind::scalar, 1};
  opts.bias = false;
  Blueprint bp = make_blueprints(Topology::mlp, 1, {}, opts).front();
  bp.layers_per_cell = 0;
  LinearFixture f{instantiate(bp, seed), {}, {}, {}};
  f.batch.kind = TargetKind::regression;
  f.batch.inputs = random_tensor({n, d}, rng, 1.0 / std::sqrt(double(d)));
  f.batch.targets = random_tensor({n}, rng);
  f.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      f.batch.inputs.data().data(), n, d);
  f.y0 = f.net.graph.forward(f.batch.inputs).data();
  return f;
}

NetworkInstance mlp_net(int d, int width, std::uint64_t seed) {
  BlueprintOptions opts;
  opts.input_shape = {d};
  opts.head = {HeadKind::scalar, 1};
  return instantiate(make_blueprints(Topology::mlp, width, {}, opts).front(), seed);
}

Batch regression_batch(int n, Shape shape, std::mt19937_64& rng) {
  Batch b;
  b.kind = TargetKind::regression;
  shape.insert(shape.begin(), n);
  b.inputs = random_tensor(shape, rng);
  b.targets = random_tensor({n}, rng);
  return b;
}

double max_deviation(const FlowTrajectory& traj, const LinearFixture& f) {
  double worst = 0;
  for (std::size_t k = 0; k < traj.size(); ++k)
    worst = std::max(worst, std::abs(traj.losses[k] - oracle::linear_flow_loss(f.x, f.y0, f.batch.targets.data(),
                                                                                traj.times[k])));
  return worst / traj.losses.front();
}

}  // namespace

TEST_SUITE("convergence-lab") {
  TEST_CASE("linear model follows the closed-form trajectory") {
    LinearFixture f = linear_fixture(6, 10, 1);
    FlowConfig cfg;
    cfg.step = 1e-4;
    cfg.horizon = 1.0;
    const FlowTrajectory traj = gradient_flow(f.net, f.batch, cfg);
    CHECK(traj.size() == 11u);
    CHECK(traj.times.back() == doctest::Approx(1.0));
    CHECK(max_deviation(traj, f) <= 1e-4);
  }

  TEST_CASE("Euler error is first order in the step") {
    LinearFixture a = linear_fixture(6, 10, 2), b = linear_fixture(6, 10, 2);
    FlowConfig cfg;
    cfg.horizon = 1.0;
    cfg.step = 2e-3;
    const double coarse = max_deviation(gradient_flow(a.net, a.batch, cfg), a);
    cfg.step = 1e-3;
    const double fine = max_deviation(gradient_flow(b.net, b.batch, cfg), b);
    CHECK(fine / coarse == doctest::Approx(0.5).epsilon(0.1));
  }

  TEST_CASE("linear model bound uses the constant lambda_min") {
    LinearFixture f = linear_fixture(5, 12, 3);
    FlowConfig cfg;
    cfg.step = 1e-3;
    const FlowTrajectory traj = gradient_flow(f.net, f.batch, cfg);
    const double want = oracle::smallest_eigenvalue(f.x * f.x.transpose());
    for (double l : traj.lambda_mins) CHECK(std::abs(l - want) <= 1e-8);
    const BoundReport r = check_bound(traj);
    CHECK(r.holds);
    CHECK(r.min_margin > 0);
  }

  TEST_CASE("interpolating start stays at zero loss") {
    LinearFixture f = linear_fixture(4, 8, 4);
    f.batch.targets = Tensor({4}, f.y0);
    FlowConfig cfg;
    cfg.step = 1e-3;
    cfg.horizon = 0.1;
    const FlowTrajectory traj = gradient_flow(f.net, f.batch, cfg);
    for (double l : traj.losses) CHECK(l == 0.0);
    CHECK(check_bound(traj).holds);
  }

  TEST_CASE("mlp losses do not increase under the guarded step") {
    std::mt19937_64 rng(5);
    NetworkInstance net = mlp_net(6, 64, 5);
    const Batch b = regression_batch(8, {6}, rng);
    FlowConfig cfg;
    cfg.horizon = 0.5;
    cfg.record_every = 0.01;
    const FlowTrajectory traj = gradient_flow(net, b, cfg);
    for (std::size_t k = 1; k < traj.size(); ++k) {
      if (traj.lambda_mins[k - 1] > 0) CHECK(traj.losses[k] <= traj.losses[k - 1] * (1 + 1e-12));
      CHECK(traj.lambda_mins[k] >= -1e-8 * traj.lambda_mins.front() - 1e-12);
    }
    CHECK(check_bound(traj).holds);
  }

  TEST_CASE("check_bound negative controls") {
    FlowTrajectory traj;
    traj.times = {0, 1, 2};
    traj.losses = {0, 0, 0};
    traj.lambda_mins = {1, 1, 1};
    traj.bound_values = {0, 0, 0};
    CHECK(check_bound(traj).holds);

    traj.losses = {1.0, std::exp(-1.5), std::exp(-3.0)};
    CHECK(check_bound(traj).holds);
    traj.losses[1] = 0.9;
    const BoundReport r = check_bound(traj);
    CHECK_FALSE(r.holds);
    REQUIRE(r.violations.size() == 1u);
    CHECK(r.violations[0] == 1u);
    CHECK(r.min_margin < 0);

    traj.times = {0, 0, 1};
    CHECK_THROWS_AS(check_bound(traj), ContractError);
  }

  TEST_CASE("running minimum of lambda is used") {
    FlowTrajectory traj;
    traj.times = {0, 1, 2};
    traj.lambda_mins = {1.0, 0.1, 1.0};
    traj.bound_values = {1, 1, 1};
    // at t=2 the bound must use 0.1, not 1.0
    traj.losses = {1.0, 0.5, 0.7};
    CHECK(check_bound(traj).holds);
  }

  TEST_CASE("guard and divergence") {
    std::mt19937_64 rng(6);
    NetworkInstance net = mlp_net(4, 16, 6);
    const Batch b = regression_batch(6, {4}, rng);
    FlowConfig cfg;
    cfg.step = 10.0;
    cfg.horizon = 1000.0;
    cfg.record_every = 10.0;
    CHECK_THROWS_WITH_AS(gradient_flow(net, b, cfg), doctest::Contains("guard"), ContractError);
    cfg.enforce_guard = false;
    CHECK_THROWS_AS(gradient_flow(net, b, cfg), DivergenceError);
  }

  TEST_CASE("flow needs a scalar head") {
    BlueprintOptions opts;
    opts.input_shape = {4};
    NetworkInstance net = instantiate(make_blueprints(Topology::mlp, 4, {}, opts).front(), 1);
    std::mt19937_64 rng(7);
    Batch b = regression_batch(4, {4}, rng);
    CHECK_THROWS_AS(gradient_flow(net, b, FlowConfig{}), ContractError);
  }

  TEST_CASE("spectral rows") {
    const SpectralRow id = spectral_row(GramMatrix{Eigen::MatrixXd::Identity(4, 4)});
    CHECK(id.lambda_min == doctest::Approx(1.0));
    CHECK(id.fro_norm == doctest::Approx(2.0));
    const Eigen::Vector3d g(1, 2, -2);
    const SpectralRow r1 = spectral_row(GramMatrix{g * g.transpose()});
    CHECK(std::abs(r1.lambda_min) <= 1e-12);
    CHECK(r1.fro_norm == doctest::Approx(9.0));
    CHECK(r1.holds);
  }

  TEST_CASE("spectral inequality at init over sampled genotypes") {
    std::mt19937_64 rng(8);
    BlueprintOptions opts;
    opts.input_shape = {2, 4, 4};
    opts.num_cells = 1;
    opts.head = {HeadKind::scalar, 1};
    std::vector<NetworkInstance> nets;
    for (const auto& cell : sample_cells(4, 50)) nets.push_back(instantiate(make_blueprints(Topology::chain, 4, cell, opts).front(), 3));
    const auto rows = fnorm_bound_sweep(nets, regression_batch(6, {2, 4, 4}, rng));
    REQUIRE(rows.size() == 50u);
    for (const auto& r : rows) CHECK(r.holds);
  }
}
