#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

#include "knas/archspace.hpp"
#include "knas/eigensolver.hpp"
#include "knas/gram.hpp"

#include <cmath>

using namespace knas;
using knas::test::random_matrix;

namespace {

Eigen::MatrixXd random_psd(Index n, std::mt19937_64& rng) {
  const Eigen::MatrixXd a = random_matrix(n, n + 2, rng);
  return a * a.transpose();
}

ColumnRanges random_ranges(Index p, std::mt19937_64& rng) {
  ColumnRanges cols;
  std::uniform_int_distribution<Index> width(1, 16);
  for (Index at = 0; at < p;) {
    const Index end = std::min(p, at + width(rng));
    cols.emplace_back(at, end);
    at = end;
  }
  return cols;
}

NetworkInstance small_net(const CellGenotype& cell, std::uint64_t seed) {
  BlueprintOptions opts;
  opts.input_shape = {2, 4, 4};
  opts.num_cells = 1;
  return instantiate(make_blueprints(Topology::chain, 3, cell, opts).front(), seed);
}

Batch small_batch(int n, std::mt19937_64& rng) {
  Batch b;
  b.inputs = knas::test::random_tensor({n, 2, 4, 4}, rng);
  b.targets = Tensor({n});
  for (int i = 0; i < n; ++i) b.targets[i] = i % 4;
  return b;
}

}  // namespace

TEST_SUITE("gramkernel") {
  TEST_CASE("gram of identity and of one row") {
    CHECK(gram(Eigen::MatrixXd::Identity(3, 3)).h == Eigen::MatrixXd::Identity(3, 3));
    Eigen::MatrixXd g(1, 3);
    g << 1, 2, 3;
    const GramMatrix h = gram(g);
    REQUIRE(h.n() == 1);
    CHECK(h.h(0, 0) == 14);
  }

  TEST_CASE("gram matches the double loop and is symmetric PSD") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::MatrixXd g = random_matrix(4, 10, rng);
      const GramMatrix h = gram(g);
      CHECK((h.h - oracle::gram(g)).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(h.h == h.h.transpose());
      CHECK(lambda_min(h) >= -1e-8 * fro_norm(h));
    }
  }

  TEST_CASE("gram rejects non-finite input") {
    Eigen::MatrixXd g = Eigen::MatrixXd::Ones(2, 2);
    g(1, 0) = NAN;
    CHECK_THROWS_AS(gram(g), NumericError);
  }

  TEST_CASE("mgm_exact") {
    CHECK(*mgm_exact(GramMatrix{Eigen::MatrixXd::Identity(2, 2)}).value == 0.5);
    Eigen::MatrixXd same(3, 4);
    same.rowwise() = Eigen::RowVector4d(1, -2, 0.5, 3);
    CHECK(*mgm_exact(gram(same)).value == doctest::Approx(same.row(0).squaredNorm()).epsilon(1e-14));
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::MatrixXd g = random_matrix(5, 7, rng);
      CHECK(std::abs(*mgm_exact(gram(g)).value - oracle::mean_entries(oracle::gram(g))) <= 1e-12);
    }
  }

  TEST_CASE("layer sampling saturates to the per-layer exact mean") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::MatrixXd g = random_matrix(6, 40, rng);
      const ColumnRanges cols = random_ranges(40, rng);
      const double got = layer_sampled_from_grads(g, cols, 64, trial);
      CHECK(std::abs(got - oracle::layer_mean(g, cols)) <= 1e-10);
    }
  }

  TEST_CASE("layer sampling averages to its expectation") {
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd g = random_matrix(4, 60, rng).array() + 0.5;
    const ColumnRanges cols{{0, 20}, {20, 60}};
    double mean = 0;
    for (int seed = 0; seed < 100; ++seed) mean += layer_sampled_from_grads(g, cols, 8, seed) / 100.0;
    const double want = oracle::layer_sampled_expectation(g, cols, 8);
    CHECK(std::abs(mean - want) <= 0.05 * std::abs(want));
  }

  TEST_CASE("layer sampling warns when clamping") {
    std::vector<std::string> warnings;
    const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(2, 5);
    layer_sampled_from_grads(g, {{0, 2}, {2, 5}}, 50, 1, &warnings);
    CHECK(warnings.size() == 2u);
  }

  TEST_CASE("split halves on constant and antisymmetric coordinates") {
    Eigen::MatrixXd equal = Eigen::MatrixXd::Constant(6, 1, 1.5);
    CHECK(split_halves_from_grads(equal, {{0, 1}}, 1, 3) == doctest::Approx(3 * 1.5 * 1.5));
    Eigen::MatrixXd anti(2, 1);
    anti << 2.0, -2.0;
    CHECK(split_halves_from_grads(anti, {{0, 1}}, 1, 3) == doctest::Approx(-4.0));
  }

  TEST_CASE("split halves expectation matches the exhaustive n=4 oracle") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd g = random_matrix(4, 6, rng);
    const ColumnRanges cols{{0, 2}, {2, 6}};
    const double want = oracle::split_expectation(g, cols);
    double sum = 0, sq = 0;
    const int draws = 1000;
    for (int seed = 0; seed < draws; ++seed) {
      const double v = split_halves_from_grads(g, cols, 64, static_cast<std::uint64_t>(seed));
      sum += v;
      sq += v * v;
    }
    const double mean = sum / draws;
    const double sd = std::sqrt(std::max(0.0, sq / draws - mean * mean));
    CHECK(std::abs(mean - want) <= 3.0 * sd / std::sqrt(double(draws)));
  }

  TEST_CASE("split halves needs an even batch") {
    const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(3, 2);
    try {
      split_halves_from_grads(g, {{0, 2}}, 1, 0);
      FAIL("expected a contract error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("drop one example") != std::string::npos);
    }
  }

  TEST_CASE("lambda_min") {
    CHECK(lambda_min(GramMatrix{Eigen::MatrixXd::Identity(4, 4)}) == doctest::Approx(1.0));
    CHECK(lambda_min(GramMatrix{Eigen::Vector3d(3, 1, 2).asDiagonal()}) == doctest::Approx(1.0));
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::MatrixXd h = random_psd(5, rng);
      CHECK(std::abs(lambda_min(GramMatrix{h}) - oracle::smallest_eigenvalue(h)) <= 1e-8);
    }
    CHECK_THROWS_AS(lambda_min(GramMatrix{Eigen::MatrixXd::Identity(5, 5)}, 4), ContractError);
  }

  TEST_CASE("jacobi eigenvalues agree with Eigen's solver") {
    std::mt19937_64 rng(7);
    for (int n : {1, 2, 7, 16}) {
      const Eigen::MatrixXd a = random_matrix(n, n, rng);
      const Eigen::MatrixXd s = a + a.transpose();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
      CHECK((symmetric_eigenvalues(s) - es.eigenvalues()).cwiseAbs().maxCoeff() <= 1e-10 * s.norm());
    }
  }

  TEST_CASE("fro_norm and the spectral inequality") {
    CHECK(fro_norm(GramMatrix{Eigen::MatrixXd::Identity(3, 3)}) == doctest::Approx(std::sqrt(3.0)));
    CHECK(fro_norm(GramMatrix{Eigen::MatrixXd::Zero(2, 2)}) == 0.0);
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<Index> size(1, 8);
    for (int trial = 0; trial < 1000; ++trial) {
      const GramMatrix h{random_psd(size(rng), rng)};
      REQUIRE(lambda_min(h) <= fro_norm(h));
    }
  }

  TEST_CASE("network scores are deterministic and consistent") {
    std::mt19937_64 rng(9);
    NetworkInstance net = small_net(CellGenotype::parse("conv3x3|skip|conv1x1|avgpool3x3|conv3x3|skip"), 4);
    const Batch b = small_batch(6, rng);
    MgmConfig cfg;
    cfg.seed = 11;
    for (Estimator e : {Estimator::exact, Estimator::layer_sampled, Estimator::split_halves}) {
      cfg.estimator = e;
      const MgmScore a = mgm_score(net, b, cfg), c = mgm_score(net, b, cfg);
      CHECK(a.numeric_ok);
      CHECK(a.estimator == e);
      CHECK(a == c);
    }
    cfg.gradient_mode = GradientMode::output;
    const Eigen::MatrixXd g = per_example_output_grads(net, b, GradientMode::output);
    CHECK(*mgm_exact(net, b, cfg).value == doctest::Approx(oracle::mean_entries(oracle::gram(g))).epsilon(1e-12));
    cfg.per_layer_samples = 100000;
    CHECK(*mgm_layer_sampled(net, b, cfg).value ==
          doctest::Approx(oracle::layer_mean(g, parameter_columns(net.graph))).epsilon(1e-10));
  }

  TEST_CASE("non-finite gradients give a failed score") {
    std::mt19937_64 rng(10);
    NetworkInstance net = small_net(CellGenotype::parse("skip|skip|skip|skip|skip|skip"), 4);
    net.graph.parameters()[0].value[0] = NAN;
    const MgmScore s = mgm_score(net, small_batch(4, rng), MgmConfig{});
    CHECK_FALSE(s.numeric_ok);
    CHECK_FALSE(s.value.has_value());
    CHECK_FALSE(s.failure.empty());
  }

  TEST_CASE("odd scoring batch is rejected by split halves") {
    std::mt19937_64 rng(11);
    NetworkInstance net = small_net(CellGenotype::parse("skip|skip|skip|skip|skip|skip"), 4);
    CHECK_THROWS_AS(mgm_split_halves(net, small_batch(5, rng), MgmConfig{}), ContractError);
  }
}
