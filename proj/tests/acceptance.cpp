// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "nlcapi/capi.hpp"
#include "nlcapi/erg.hpp"
#include "nlcapi/errors.hpp"
#include "nlcapi/estimator.hpp"
#include "nlcapi/io.hpp"
#include "nlcapi/mlp.hpp"
#include "nlcapi/partition.hpp"
#include "nlcapi/systems.hpp"
#include "test_util.hpp"

using namespace nlcapi;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Vec v1(double r) { return Vec::Constant(1, r); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Fixture {
  std::string name;
  SystemSpec sys;
  PwaNetwork net;
  std::vector<PwaConstraint> cs;
  PartitionTree tree;
  double build_s = 0.0;
};

Fixture load_fixture(const std::string& name) {
  Fixture f;
  f.name = name;
  f.sys = system_by_name(name);
  const std::string dir = NLCAPI_FIXTURE_DIR;
  f.net = network_from_json(read_json(dir + "/" + name + "_lyapunov.json"));
  f.cs = constraints_from_json(read_json(dir + "/" + name + "_constraints.json"), f.sys.state_dim()).all();
  const auto t0 = Clock::now();
  f.tree = build_partition_tree(f.net, Polytope::box(f.sys.domain_lo, f.sys.domain_hi));
  annotate_lower_bounds(f.tree, f.net);
  f.build_s = since(t0);
  return f;
}

double cmax(const std::vector<PwaConstraint>& cs, const Vec& x) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& c : cs) m = std::max(m, c(x));
  return m;
}

Vec uniform_ref(const SystemSpec& sys, std::mt19937_64& rng) {
  return testutil::uniform_in_box(sys.ref_lo, sys.ref_hi, rng);
}

// Points x_ref + s d inside the domain box with accept(x). The admissible s
// range of each ray is found by a scan, then sampled with rejection.
template <class Accept, class Visit>
long sample_along_rays(const Vec& lo, const Vec& hi, const Vec& center, long count, int per_ray,
                       std::mt19937_64& rng, Accept accept, Visit visit) {
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int n = static_cast<int>(lo.size());
  long drawn = 0, rays = 0;
  while (drawn < count) {
    Vec d = Vec::NullaryExpr(n, [&] { return N(rng); });
    d.normalize();
    double t_max = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (d[i] > 0) t_max = std::min(t_max, (hi[i] - center[i]) / d[i]);
      if (d[i] < 0) t_max = std::min(t_max, (lo[i] - center[i]) / d[i]);
    }
    double s_hi = 0.0;
    const int scan = 48;
    for (int k = 1; k <= scan; ++k) {
      const double s = t_max * k / scan;
      if (accept(Vec(center + s * d))) s_hi = s;
    }
    s_hi = std::min(t_max, s_hi + t_max / scan);
    ++rays;
    if (s_hi <= 0.0) continue;
    for (int k = 0; k < per_ray && drawn < count; ++k) {
      const Vec x = center + s_hi * U(rng) * d;
      if (!accept(x)) continue;
      visit(x);
      ++drawn;
    }
    if (rays > 100 * count) break;
  }
  return drawn;
}

// ------------------------------------------------------------------ criteria

Outcome oracle_equivalence(const Fixture& p) {
  Outcome o;
  double solver_s = p.build_s, oracle_s = 0.0, worst = 0.0;
  int cases = 0;
  for (int coord : {0, 1}) {
    double prev = -1.0;
    for (int k = 0; k < 20; ++k) {
      const double m = 0.05 + 0.95 * k / 19;
      std::vector<std::optional<double>> lo(2), hi(2);
      lo[coord] = -m;
      hi[coord] = m;
      const auto cs = box_constraints(lo, hi);
      auto t0 = Clock::now();
      const LevelSolver solver(p.tree, p.net, p.sys.emap, cs);
      const double g = solver.solve(v1(0.0)).gamma_star;
      solver_s += since(t0);
      t0 = Clock::now();
      const double q = grid_oracle_gamma(p.net, p.sys.emap, cs, v1(0.0), p.sys.domain_lo, p.sys.domain_hi, 400);
      oracle_s += since(t0);
      const double rel = std::abs(g - q) / std::abs(q);
      worst = std::max(worst, rel);
      if (!(rel <= 0.02)) o.pass = false;
      if (g < prev) o.pass = false;
      prev = g;
      ++cases;
    }
  }
  if (!(solver_s < 5.0)) o.pass = false;
  o.detail = std::to_string(cases) + " cases, worst rel " + fmt("%.2e", worst) + ", solver " + fmt("%.3f", solver_s) +
             " s (oracle " + fmt("%.2f", oracle_s) + " s)";
  return o;
}

// Some first-layer plane misses the zero face of some constraint piece.
bool has_inactive_plane(const Fixture& f, const Vec& shift) {
  const DenseLayer& first = f.net.layers().front();
  const Polytope dom = f.tree.domain().translated(shift);
  for (const auto& c : f.cs) {
    for (const auto& pc : c.pieces) {
      if (pc.piece.C.norm() <= 1e-12) continue;
      Polytope face = pc.region;
      for (const auto& h : dom.halfspaces()) face.add(h);
      face.add(Hyperplane{pc.piece.C, -pc.piece.d});
      if (is_empty(face)) continue;
      for (Eigen::Index j = 0; j < first.weights.rows(); ++j) {
        const Vec w = first.weights.row(j).transpose();
        if (w.norm() <= 1e-12) continue;
        // Pre-activation at tree coordinates y = x - shift.
        const double off = first.bias[j] - w.dot(shift);
        const LpResult lo = solve_lp(w, face), hi = solve_lp(-w, face);
        if (!lo.optimal() || !hi.optimal()) continue;
        const double mn = lo.value + off, mx = -hi.value + off;
        if (mn > 1e-7 * w.norm() || mx < -1e-7 * w.norm()) return true;
      }
    }
  }
  return false;
}

Outcome pruning_exactness(const std::vector<const Fixture*>& fixtures) {
  Outcome o;
  double worst = 0.0, worst_convex = 0.0;
  int strict_cases = 0, inactive_cases = 0, queries = 0;
  std::mt19937_64 rng(11);
  const LevelOptions none{false, false, false}, ps1{true, false, false}, ps2{false, true, false},
      both{true, true, false};
  for (const Fixture* f : fixtures) {
    const LevelSolver solver(f->tree, f->net, f->sys.emap, f->cs);
    // The same boxes as a convex polytope.
    const int n = f->sys.state_dim();
    std::vector<Vec> rows;
    std::vector<double> rhs;
    std::vector<std::optional<double>> lo(n), hi(n);
    for (const auto& c : f->cs) {
      const auto& pc = c.pieces.front();
      rows.push_back(pc.piece.C);
      rhs.push_back(-pc.piece.d);
      for (int i = 0; i < n; ++i) {
        if (pc.piece.C[i] > 0) hi[i] = -pc.piece.d / pc.piece.C[i];
        if (pc.piece.C[i] < 0) lo[i] = -pc.piece.d / pc.piece.C[i];
      }
    }
    Mat A(rows.size(), n);
    Vec b(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      A.row(i) = rows[i].transpose();
      b[i] = rhs[i];
    }
    const LevelSolver boxes(f->tree, f->net, f->sys.emap, box_constraints(lo, hi));
    for (int k = 0; k < 50; ++k) {
      const Vec r = uniform_ref(f->sys, rng);
      const LevelResult a = solver.solve(r, none);
      const LevelResult b1 = solver.solve(r, ps1);
      const LevelResult b2 = solver.solve(r, ps2);
      const LevelResult b3 = solver.solve(r, both);
      for (const auto* x : {&b1, &b2, &b3}) worst = std::max(worst, std::abs(x->gamma_star - a.gamma_star));
      if (has_inactive_plane(*f, f->sys.emap.equilibrium(r))) {
        ++inactive_cases;
        if (b3.counters.lps_solved < a.counters.lps_solved) {
          ++strict_cases;
        } else {
          o.pass = false;
        }
      }
      const double gen = boxes.solve(r, none).gamma_star;
      const double cvx = boxes.solve_convex(A, b, r, -1, none).gamma_star;
      worst_convex = std::max(worst_convex, std::abs(gen - cvx));
      ++queries;
    }
  }
  if (!(worst <= 1e-9) || !(worst_convex <= 1e-9)) o.pass = false;
  o.detail = std::to_string(queries) + " references, max gap " + fmt("%.1e", worst) + ", fewer LPs in " +
             std::to_string(strict_cases) + "/" + std::to_string(inactive_cases) +
             " cases with an inactive plane, convex gap " + fmt("%.1e", worst_convex);
  return o;
}

std::set<std::vector<std::vector<int>>> leaf_patterns(const PartitionTree& tree) {
  std::set<std::vector<std::vector<int>>> out;
  for (int id : tree.leaves()) {
    std::vector<std::vector<int>> bits;
    for (const auto& layer : tree.node(id).pattern.bits) bits.emplace_back(layer.begin(), layer.end());
    out.insert(bits);
  }
  return out;
}

Outcome tree_correctness(const Fixture& cartpole) {
  Outcome o;
  // Leaf sets against exhaustive enumeration.
  struct Net {
    std::vector<int> widths;
    std::uint64_t seed;
  };
  const std::vector<Net> nets = {{{2, 6, 6, 1}, 1}, {{2, 12, 1}, 2}, {{3, 5, 4, 1}, 3}, {{2, 4, 4, 4, 1}, 4}};
  int leaf_total = 0;
  for (const auto& spec : nets) {
    const PwaNetwork net = testutil::random_net(spec.widths, spec.seed);
    const int dim = spec.widths.front();
    const Polytope dom = Polytope::box(Vec::Constant(dim, -1.0), Vec::Constant(dim, 1.0));
    const PartitionTree tree = build_partition_tree(net, dom);
    if (leaf_patterns(tree) != testutil::feasible_patterns(net, dom)) o.pass = false;
    leaf_total += static_cast<int>(tree.leaves().size());
  }

  // Forward pass against the located leaf piece.
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const Vec x = testutil::uniform_in_box(cartpole.sys.domain_lo, cartpole.sys.domain_hi, rng);
    const double a = testutil::naive_forward(cartpole.net, x);
    const double b = cartpole.tree.locate(x).piece(x);
    worst = std::max(worst, std::abs(a - b));
  }
  if (!(worst <= 1e-9)) o.pass = false;

  // Parent bound equals the min over children.
  long mismatched = 0, interior = 0;
  for (const auto& node : cartpole.tree.nodes()) {
    if (node.is_leaf()) continue;
    ++interior;
    double m = std::numeric_limits<double>::infinity();
    for (int c : node.children) m = std::min(m, cartpole.tree.node(c).v_lower);
    if (node.v_lower != m) ++mismatched;
  }
  if (mismatched != 0) o.pass = false;
  o.detail = std::to_string(nets.size()) + " enumerated nets (" + std::to_string(leaf_total) +
             " leaves), forward gap " + fmt("%.1e", worst) + " over 1e5 samples, " + std::to_string(mismatched) + "/" +
             std::to_string(interior) + " interior bounds off";
  return o;
}

Outcome capi_invariance(const std::vector<const Fixture*>& fixtures) {
  Outcome o;
  long states = 0, violations = 0;
  std::mt19937_64 rng(21);
  LevelOptions opts;
  opts.cap_to_domain = true;
  for (const Fixture* f : fixtures) {
    const LevelSolver solver(f->tree, f->net, f->sys.emap, f->cs);
    for (int k = 0; k < 10; ++k) {
      const Vec r = uniform_ref(f->sys, rng);
      const double level = solver.solve(r, opts).gamma_star - 1e-6;
      const Vec xr = f->sys.emap.equilibrium(r);
      const Vec lo = xr + f->sys.domain_lo, hi = xr + f->sys.domain_hi;
      auto inside = [&](const Vec& x) { return rdlf_value(f->net, f->sys.emap, x, r) <= level; };
      const long got = sample_along_rays(lo, hi, xr, 10000, 8, rng, inside, [&](const Vec& x) {
        const Vec next = f->sys.closed_loop(x, r);
        if (!inside(next) || cmax(f->cs, x) > 0.0 || cmax(f->cs, next) > 0.0) ++violations;
      });
      if (got != 10000) o.pass = false;
      states += got;
    }
  }
  if (violations != 0) o.pass = false;
  o.detail = std::to_string(states) + " states, " + std::to_string(violations) + " violations";
  return o;
}

Outcome estimator_safety(const Fixture& f, EstimatorNet& trained, double& train_s) {
  Outcome o;
  LevelOptions opts;
  opts.cap_to_domain = true;
  const LevelSolver solver(f.tree, f.net, f.sys.emap, f.cs);
  const LevelOracle q = [&](const Vec& r) { return solver.solve(r, opts).gamma_star; };
  const Polytope rdom = Polytope::box(f.sys.ref_lo, f.sys.ref_hi);
  EstimatorConfig cfg;
  cfg.max_iters = 50;
  cfg.seed = 3;
  const auto t0 = Clock::now();
  try {
    trained = train_estimator(q, f.tree, f.net, f.sys.emap, f.cs, rdom, cfg);
  } catch (const Unverified& e) {
    o.pass = false;
    o.detail = std::string("not verified: ") + e.what();
    return o;
  }
  train_s = since(t0);

  std::mt19937_64 rng(31);
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 1000; ++k) {
    const Vec r = uniform_ref(f.sys, rng);
    worst_gap = std::max(worst_gap, trained(r) - q(r));
  }
  if (!(worst_gap <= 1e-6)) o.pass = false;

  // {(x, r) : r in R, x - E r in D, V(x, r) <= E(r)}
  long drawn = 0, bad = 0;
  double worst_c = -std::numeric_limits<double>::infinity();
  while (drawn < 1000000) {
    const Vec r = uniform_ref(f.sys, rng);
    const double e = trained(r);
    const Vec xr = f.sys.emap.equilibrium(r);
    auto inside = [&](const Vec& x) { return rdlf_value(f.net, f.sys.emap, x, r) <= e; };
    drawn += sample_along_rays(xr + f.sys.domain_lo, xr + f.sys.domain_hi, xr, 16, 16, rng, inside,
                               [&](const Vec& x) {
                                 const double c = cmax(f.cs, x);
                                 worst_c = std::max(worst_c, c);
                                 if (c > 1e-8) ++bad;
                               });
  }
  if (bad != 0) o.pass = false;
  o.detail = "verified after " + std::to_string(trained.iterations) + " iterations (" + fmt("%.1f", train_s) +
             " s), max E - Q " + fmt("%.2e", worst_gap) + " on 1e3 references, " + std::to_string(drawn) +
             " feasible samples with max c " + fmt("%.2e", worst_c);
  return o;
}

Outcome timing(const Fixture& f, const EstimatorNet& est) {
  Outcome o;
  if (est.net.layers().empty()) return {false, "no trained estimator"};
  LevelOptions opts;
  opts.cap_to_domain = true;
  const LevelSolver solver(f.tree, f.net, f.sys.emap, f.cs);
  std::mt19937_64 rng(41);
  for (int i = 0; i < 5; ++i) solver.solve(uniform_ref(f.sys, rng), opts);
  const int reps = 100;
  double sum = 0.0, mx = 0.0;
  for (int i = 0; i < reps; ++i) {
    const Vec r = uniform_ref(f.sys, rng);
    const auto t0 = Clock::now();
    solver.solve(r, opts);
    const double ms = 1e3 * since(t0);
    sum += ms;
    mx = std::max(mx, ms);
  }
  const double mean_ms = sum / reps;

  const int calls = 10000;
  std::vector<Vec> refs;
  for (int i = 0; i < calls; ++i) refs.push_back(uniform_ref(f.sys, rng));
  double sink = 0.0;
  const auto t0 = Clock::now();
  for (const auto& r : refs) sink += est(r);
  const double infer_us = 1e6 * since(t0) / calls;

  if (!(mean_ms <= 100.0) || !(infer_us <= 1000.0) || !(f.build_s <= 600.0) || !std::isfinite(sink)) o.pass = false;
  o.detail = "query mean " + fmt("%.1f", mean_ms) + " ms (max " + fmt("%.1f", mx) + ") over " + std::to_string(reps) +
             ", inference " + fmt("%.2f", infer_us) + " us, build " + fmt("%.2f", f.build_s) + " s (" +
             std::to_string(f.tree.leaves().size()) + " leaves)";
  return o;
}

Outcome erg(const Fixture& f, const EstimatorNet& est) {
  Outcome o;
  if (est.net.layers().empty()) return {false, "no trained estimator"};
  LevelOptions opts;
  opts.cap_to_domain = true;
  const LevelSolver solver(f.tree, f.net, f.sys.emap, f.cs);
  ErgConfig cfg;
  cfg.eta = 2.0;
  cfg.dt = f.sys.tau;
  Vec x0 = Vec::Zero(4);
  x0[0] = -0.4;
  const double r = 0.399;
  std::string detail;
  for (const auto& [label, source] : {std::pair<std::string, LevelSource>{"exact", exact_level_source(solver, opts)},
                                      {"estimator", estimator_level_source(est)}}) {
    try {
      const ErgTrajectory tr = simulate_erg(f.sys, f.net, source, f.cs, x0, r, cfg);
      double min_delta = std::numeric_limits<double>::infinity(), max_c = -min_delta;
      for (const auto& rec : tr.records) {
        min_delta = std::min(min_delta, rec.delta);
        for (double c : rec.c) max_c = std::max(max_c, c);
      }
      const double gap = std::abs(tr.records.back().v - r);
      if (!(min_delta >= 0.0) || !(max_c <= 1e-8) || !(gap <= 0.01)) o.pass = false;
      detail += label + ": min Delta " + fmt("%.1e", min_delta) + ", max c " + fmt("%.1e", max_c) + ", |v - r| " +
                fmt("%.1e", gap) + "; ";
    } catch (const ConstraintViolated& e) {
      o.pass = false;
      detail += label + ": violation at step " + std::to_string(e.step) + "; ";
    }
  }
  cfg.governor = false;
  try {
    simulate_erg(f.sys, f.net, exact_level_source(solver, opts), f.cs, x0, r, cfg);
    o.pass = false;
    detail += "baseline: no violation";
  } catch (const ConstraintViolated& e) {
    detail += std::string("baseline: ") + e.what();
  }
  o.detail = detail;
  return o;
}

Outcome gradient_check() {
  Outcome o;
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<Vec> inputs;
  std::vector<double> targets;
  for (int i = 0; i < 50; ++i) {
    inputs.push_back(v1(U(rng)));
    targets.push_back(U(rng));
  }
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const PwaNetwork net = testutil::random_net({1, 8, 4, 1}, 900 + trial);
    ParamGrad g = ParamGrad::zeros_like(net);
    mse_loss(net, inputs, targets, &g);
    PwaNetwork plus = net, minus = net;
    double analytic = 0.0;
    for (std::size_t l = 0; l < g.W.size(); ++l) {
      const Mat dW = Mat::NullaryExpr(g.W[l].rows(), g.W[l].cols(), [&] { return N(rng); });
      const Vec db = Vec::NullaryExpr(g.b[l].size(), [&] { return N(rng); });
      analytic += (dW.array() * g.W[l].array()).sum() + db.dot(g.b[l]);
      plus.mutable_layers()[l].weights += h * dW;
      plus.mutable_layers()[l].bias += h * db;
      minus.mutable_layers()[l].weights -= h * dW;
      minus.mutable_layers()[l].bias -= h * db;
    }
    const double fd = (mse_loss(plus, inputs, targets) - mse_loss(minus, inputs, targets)) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic) / std::max(std::abs(fd), 1e-8));
  }
  if (!(worst <= 1e-4)) o.pass = false;
  o.detail = "100 perturbations, worst rel " + fmt("%.1e", worst);
  return o;
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), since(t0));
    std::fflush(stdout);
  };

  const Fixture pendulum = load_fixture("pendulum");
  const Fixture cartpole = load_fixture("cartpole");
  EstimatorNet est;
  double train_s = 0.0;

  report("oracle equivalence", [&] { return oracle_equivalence(pendulum); });
  report("pruning exactness", [&] { return pruning_exactness({&pendulum, &cartpole}); });
  report("partition tree correctness", [&] { return tree_correctness(cartpole); });
  report("level invariance", [&] { return capi_invariance({&pendulum, &cartpole}); });
  report("estimator safety", [&] { return estimator_safety(cartpole, est, train_s); });
  report("timing", [&] { return timing(cartpole, est); });
  report("reference governor run", [&] { return erg(cartpole, est); });
  report("backprop gradients", [&] { return gradient_check(); });
  return failed == 0 ? 0 : 1;
}
