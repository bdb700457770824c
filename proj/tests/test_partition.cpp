#include <random>
#include <set>

#include "doctest.h"
#include "nlcapi/errors.hpp"
#include "nlcapi/partition.hpp"
#include "nlcapi/systems.hpp"
#include "test_util.hpp"

using namespace nlcapi;

namespace {

Vec v1(double a) { return (Vec(1) << a).finished(); }

std::set<std::vector<std::vector<int>>> leaf_patterns(const PartitionTree& tree) {
  std::set<std::vector<std::vector<int>>> out;
  for (int i : tree.leaves()) {
    std::vector<std::vector<int>> bits;
    for (const auto& l : tree.node(i).pattern.bits) bits.emplace_back(l.begin(), l.end());
    out.insert(bits);
  }
  return out;
}

}  // namespace

TEST_CASE("absolute value network on [-1, 1]") {
  const PwaNetwork net = testutil::abs_net();
  PartitionTree tree = build_partition_tree(net, Polytope::box(v1(-1), v1(1)));
  REQUIRE(tree.leaves().size() == 2);
  std::set<double> slopes;
  for (int i : tree.leaves()) {
    slopes.insert(tree.node(i).piece.C[0]);
    CHECK(tree.node(i).piece.d == 0.0);
  }
  CHECK(slopes == std::set<double>{-1.0, 1.0});

  annotate_lower_bounds(tree, net);
  for (int i : tree.leaves()) CHECK(tree.node(i).v_lower == doctest::Approx(0.0));
  CHECK(tree.root().v_lower == doctest::Approx(0.0));
  CHECK(tree.root().v_upper == doctest::Approx(1.0));

  CHECK(tree.locate(v1(0.5)).piece.C[0] == 1.0);
  const auto& at_kink = tree.locate(v1(0.0));
  CHECK(at_kink.piece(v1(0.0)) == 0.0);
  CHECK_THROWS_AS(tree.locate(v1(1.5)), NotInDomain);
}

TEST_CASE("two crossing neurons give four leaves") {
  DenseLayer h{(Mat(2, 2) << 1, 0.3, -0.2, 1).finished(), (Vec(2) << 0.1, -0.05).finished()};
  DenseLayer o{(Mat(1, 2) << 1, 1).finished(), Vec::Zero(1)};
  const PwaNetwork net({h, o});
  const Polytope box = Polytope::box(Vec::Constant(2, -1), Vec::Constant(2, 1));
  const PartitionTree tree = build_partition_tree(net, box);
  CHECK(tree.leaves().size() == 4);
  CHECK(leaf_patterns(tree) == testutil::feasible_patterns(net, box));
}

TEST_CASE("leaf set equals exhaustive pattern enumeration") {
  const std::vector<std::vector<int>> archs = {
      {2, 8, 1}, {2, 4, 4, 1}, {2, 3, 3, 3, 1}, {3, 6, 5, 1}, {2, 6, 6, 1}, {4, 6, 6, 1}};
  for (std::size_t a = 0; a < archs.size(); ++a) {
    const auto& arch = archs[a];
    const double bias = a == 5 ? 0.0 : 0.5;
    const PwaNetwork net = testutil::random_net(arch, 100 + a, bias);
    const int n = net.input_dim();
    const Polytope box = Polytope::box(Vec::Constant(n, -1), Vec::Constant(n, 1));
    const PartitionTree tree = build_partition_tree(net, box);
    const auto got = leaf_patterns(tree);
    CHECK(got.size() == tree.leaves().size());
    CHECK(got == testutil::feasible_patterns(net, box));
  }
}

TEST_CASE("leaf pieces agree with forward and bounds are sound") {
  std::mt19937_64 rng(9);
  const PwaNetwork net = testutil::random_net({2, 6, 5, 1}, 77);
  const Polytope box = Polytope::box(Vec::Constant(2, -1), Vec::Constant(2, 1));
  PartitionTree tree = build_partition_tree(net, box);
  annotate_lower_bounds(tree, net);

  for (int i = 0; i < 10000; ++i) {
    const Vec x = testutil::uniform_in_box(Vec::Constant(2, -1), Vec::Constant(2, 1), rng);
    const auto& leaf = tree.locate(x);
    REQUIRE(std::abs(leaf.piece(x) - net.forward(x)) <= 1e-9);
    CHECK(net.forward(x) >= leaf.v_lower - 1e-9);
    CHECK(net.forward(x) <= leaf.v_upper + 1e-9);
  }
  for (const auto& node : tree.nodes()) {
    if (node.is_leaf()) continue;
    double m = std::numeric_limits<double>::infinity();
    for (int c : node.children) m = std::min(m, tree.node(c).v_lower);
    CHECK(node.v_lower == m);
  }
}

TEST_CASE("leaf regions tile the domain") {
  std::mt19937_64 rng(10);
  const PwaNetwork net = testutil::random_net({2, 5, 4, 1}, 88);
  const Polytope box = Polytope::box(Vec::Constant(2, -1), Vec::Constant(2, 1));
  const PartitionTree tree = build_partition_tree(net, box);
  int ambiguous = 0;
  for (int i = 0; i < 20000; ++i) {
    const Vec x = testutil::uniform_in_box(Vec::Constant(2, -1), Vec::Constant(2, 1), rng);
    int inside = 0;
    for (int l : tree.leaves()) inside += tree.node(l).region.min_slack(x) > 1e-9;
    int touching = 0;
    for (int l : tree.leaves()) touching += tree.node(l).region.contains(x, 1e-9);
    CHECK(touching >= 1);
    CHECK(inside <= 1);
    ambiguous += inside == 0;
  }
  CHECK(ambiguous < 5);
}

TEST_CASE("build rejects unbounded or mismatched domains") {
  const PwaNetwork net = testutil::abs_net();
  Polytope half(1);
  half.add(Halfspace{v1(1), 1});
  CHECK_THROWS_AS(build_partition_tree(net, half), InputError);
  CHECK_THROWS_AS(build_partition_tree(net, Polytope::box(Vec::Zero(2), Vec::Ones(2))), InputError);
}

// Thin wedge cells: the complex-mode neurons of this fixture share a 2-D null space.
TEST_CASE("leaf pieces hold at region vertices of a cart-pole fixture") {
  const SystemSpec sys = cartpole_system();
  FixtureConfig cfg;
  cfg.zero_bias = true;
  cfg.hidden_noise = 0.03;
  const FixtureResult fx = train_lyapunov_fixture(sys, {4, 12, 12, 1}, cfg);
  const PartitionTree tree = build_partition_tree(fx.net, Polytope::box(sys.domain_lo, sys.domain_hi));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> gauss;
  double worst = 0.0;
  for (int id : tree.leaves()) {
    const PartitionNode& leaf = tree.node(id);
    for (int k = 0; k < 4; ++k) {
      const Vec c = k == 0 ? Vec(leaf.piece.C) : k == 1 ? Vec(-leaf.piece.C)
                                                        : Vec(Vec::NullaryExpr(4, [&] { return gauss(rng); }));
      const LpResult r = solve_lp(c, leaf.region);
      REQUIRE(r.optimal());
      worst = std::max(worst, std::abs(fx.net.forward(r.point) - leaf.piece(r.point)));
    }
  }
  CHECK(worst <= 1e-9);
}
