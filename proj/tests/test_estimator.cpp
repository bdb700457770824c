#include <cmath>
#include <random>

#include "doctest.h"
#include "nlcapi/capi.hpp"
#include "nlcapi/errors.hpp"
#include "nlcapi/estimator.hpp"
#include "nlcapi/systems.hpp"
#include "test_util.hpp"

using namespace nlcapi;

namespace {

Vec v1(double a) { return (Vec(1) << a).finished(); }

// Pendulum fixture with |theta| <= 0.5 and |theta_dot| <= 0.8. The reference map is
// zero, so the exact level does not depend on r.
struct PendulumCase {
  SystemSpec sys = pendulum_system();
  FixtureResult fx = train_lyapunov_fixture(sys, {2, 8, 1});
  PartitionTree tree;
  std::vector<PwaConstraint> cs = box_constraints({-0.5, -0.8}, {0.5, 0.8});
  Polytope rdom = Polytope::box(sys.ref_lo, sys.ref_hi);

  PendulumCase() {
    tree = build_partition_tree(fx.net, Polytope::box(sys.domain_lo, sys.domain_hi));
    annotate_lower_bounds(tree, fx.net);
  }
  double cmax(const Vec& x) const {
    double m = -1e300;
    for (const auto& c : cs) m = std::max(m, c(x));
    return m;
  }
};

const PendulumCase& pendulum() {
  static const PendulumCase p;
  return p;
}

// E(r) = a * relu(b r + c)
EstimatorNet affine_estimator(double a, double b, double c) {
  EstimatorNet e;
  e.net = PwaNetwork({DenseLayer{Mat::Constant(1, 1, b), Vec::Constant(1, c)},
                      DenseLayer{Mat::Constant(1, 1, a), Vec::Zero(1)}});
  return e;
}

}  // namespace

TEST_CASE("mse gradient matches central differences") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::normal_distribution<double> gauss;
  std::vector<Vec> inputs;
  std::vector<double> targets;
  for (int i = 0; i < 25; ++i) {
    inputs.push_back(v1(U(rng)));
    targets.push_back(U(rng));
  }
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PwaNetwork net = testutil::random_net({1, 8, 4, 1}, 500 + trial);
    ParamGrad g = ParamGrad::zeros_like(net);
    mse_loss(net, inputs, targets, &g);

    ParamGrad dir = ParamGrad::zeros_like(net);
    for (auto& W : dir.W) W = W.unaryExpr([&](double) { return gauss(rng); });
    for (auto& b : dir.b) b = b.unaryExpr([&](double) { return gauss(rng); });
    double analytic = 0.0;
    for (std::size_t l = 0; l < dir.W.size(); ++l) {
      analytic += (dir.W[l].array() * g.W[l].array()).sum() + dir.b[l].dot(g.b[l]);
    }
    PwaNetwork plus = net, minus = net;
    for (std::size_t l = 0; l < dir.W.size(); ++l) {
      plus.mutable_layers()[l].weights += h * dir.W[l];
      plus.mutable_layers()[l].bias += h * dir.b[l];
      minus.mutable_layers()[l].weights -= h * dir.W[l];
      minus.mutable_layers()[l].bias -= h * dir.b[l];
    }
    const double fd = (mse_loss(plus, inputs, targets) - mse_loss(minus, inputs, targets)) / (2 * h);
    CHECK(std::abs(fd - analytic) <= 1e-4 * std::max(std::abs(fd), 1e-8));
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("verifier on constant estimators") {
  const PendulumCase& p = pendulum();
  const EstimatorNet zero = affine_estimator(0.0, 1.0, 1.0);
  const VerifyResult z = verify_estimator(p.tree, p.fx.net, p.sys.emap, zero, p.cs, p.rdom);
  CHECK(z.verified);
  CHECK(z.opt_value < 0.0);

  const EstimatorNet big = affine_estimator(100.0, 0.0, 1.0);
  const VerifyResult b = verify_estimator(p.tree, p.fx.net, p.sys.emap, big, p.cs, p.rdom);
  CHECK_FALSE(b.verified);
  CHECK(b.opt_value > 0.0);
  REQUIRE(b.witness_x.size() == 2);
  CHECK(p.cmax(b.witness_x) == doctest::Approx(b.opt_value).epsilon(1e-9));
}

TEST_CASE("verifier agrees with a brute-force grid") {
  const PendulumCase& p = pendulum();
  const double g = max_admissible_level(p.tree, p.fx.net, p.cs, v1(0.0), p.sys.emap).gamma_star;
  const EstimatorNet e = affine_estimator(g, 0.5, 1.0);  // from 0.5 g to 1.5 g over R
  const VerifyResult res = verify_estimator(p.tree, p.fx.net, p.sys.emap, e, p.cs, p.rdom);

  double grid_best = -1e300;
  const int N = 200;
  for (int k = 0; k <= 20; ++k) {
    const Vec r = v1(-1.0 + 0.1 * k);
    const double level = e(r);
    for (int i = 0; i <= N; ++i) {
      for (int j = 0; j <= N; ++j) {
        const Vec x = (Vec(2) << -1.0 + 2.0 * i / N, -1.0 + 2.0 * j / N).finished();
        if (p.fx.net.forward(x) <= level) grid_best = std::max(grid_best, p.cmax(x));
      }
    }
  }
  CHECK(grid_best > 0.0);
  CHECK(res.opt_value >= grid_best - 1e-9);
  CHECK(res.opt_value <= grid_best + 0.02);
  CHECK(p.fx.net.forward(res.witness_x) <= e(res.witness_r) + 1e-7);
  CHECK(p.cmax(res.witness_x) == doctest::Approx(res.opt_value).epsilon(1e-9));
}

TEST_CASE("pretrain dataset") {
  const LevelOracle q = [](const Vec& r) { return 1.0 + r[0] * r[0]; };
  const Polytope R = Polytope::box(v1(-1.0), v1(2.0));
  const auto a = pretrain_dataset(q, R, 50, 9);
  const auto b = pretrain_dataset(q, R, 50, 9);
  REQUIRE(a.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].r[0] == b[i].r[0]);
    CHECK(a[i].gamma == 1.0 + a[i].r[0] * a[i].r[0]);
    CHECK(a[i].r[0] >= -1.0);
    CHECK(a[i].r[0] <= 2.0);
    CHECK_FALSE(a[i].counterexample);
  }
  CHECK(pretrain_dataset(q, R, 50, 10)[0].r[0] != a[0].r[0]);

  Polytope empty(1);
  empty.add(Halfspace{v1(1.0), -1.0}).add(Halfspace{v1(-1.0), -1.0});
  CHECK_THROWS_AS(pretrain_dataset(q, empty, 5, 1), InputError);
  CHECK_THROWS_AS(pretrain_dataset(q, R, 0, 1), InputError);
  const LevelOracle inf = [](const Vec&) { return std::numeric_limits<double>::infinity(); };
  CHECK_THROWS_AS(pretrain_dataset(inf, R, 5, 1), InputError);
}

TEST_CASE("estimator for a reference-independent level") {
  const PendulumCase& p = pendulum();
  const LevelSolver solver(p.tree, p.fx.net, p.sys.emap, p.cs);
  const LevelOracle q = [&](const Vec& r) { return solver.solve(r).gamma_star; };
  const double g = q(v1(0.0));
  EstimatorConfig cfg;
  cfg.n_pretrain = 40;
  cfg.pretrain_steps = 3000;
  cfg.steps_per_iter = 500;
  TrainLog log;
  const EstimatorNet e = train_estimator(q, p.tree, p.fx.net, p.sys.emap, p.cs, p.rdom, cfg, &log);
  CHECK(e.verified);
  CHECK(e.iterations <= 5);
  CHECK(log.verifications.back().verified);
  CHECK(e.dataset_size == static_cast<long>(log.dataset.size()));
  for (int k = 0; k <= 20; ++k) {
    const double v = e(v1(-1.0 + 0.1 * k));
    CHECK(v <= g + 1e-6);
    CHECK(v >= 0.8 * g);
  }
}

TEST_CASE("estimator recovers from an overestimating start") {
  const PendulumCase& p = pendulum();
  const LevelSolver solver(p.tree, p.fx.net, p.sys.emap, p.cs);
  const LevelOracle q = [&](const Vec& r) { return solver.solve(r).gamma_star; };
  EstimatorConfig cfg;
  cfg.n_pretrain = 40;
  cfg.pretrain_steps = 0;
  cfg.steps_per_iter = 500;
  cfg.init_bias = 10.0;
  cfg.max_iters = 20;
  TrainLog log;
  const EstimatorNet e = train_estimator(q, p.tree, p.fx.net, p.sys.emap, p.cs, p.rdom, cfg, &log);
  REQUIRE(log.verifications.size() >= 2);
  CHECK_FALSE(log.verifications.front().verified);
  CHECK(log.verifications.front().opt_value > 0.0);
  CHECK(e.verified);
  bool has_cex = false;
  for (const auto& s : log.dataset) has_cex |= s.counterexample;
  CHECK(has_cex);

  cfg.max_iters = 1;
  CHECK_THROWS_AS(train_estimator(q, p.tree, p.fx.net, p.sys.emap, p.cs, p.rdom, cfg), Unverified);
  cfg.margin = 1.5;
  CHECK_THROWS_AS(train_estimator(q, p.tree, p.fx.net, p.sys.emap, p.cs, p.rdom, cfg), InputError);
}

TEST_CASE("clamped network equals max(0, net)") {
  const PwaNetwork net = testutil::random_net({1, 6, 1}, 77);
  EstimatorNet e;
  e.net = net;
  const PwaNetwork c = e.clamped();
  for (int k = 0; k <= 100; ++k) {
    const Vec r = v1(-2.0 + 0.04 * k);
    CHECK(c.forward(r) == doctest::Approx(std::max(0.0, net.forward(r))).epsilon(1e-14));
    CHECK(c.forward(r) == e(r));
  }
}
