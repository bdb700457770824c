// nlcapi: command-line front end for tree building, level queries, estimator
// training and verification, ERG simulation and benchmarks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "nlcapi/capi.hpp"
#include "nlcapi/erg.hpp"
#include "nlcapi/errors.hpp"
#include "nlcapi/estimator.hpp"
#include "nlcapi/io.hpp"
#include "nlcapi/systems.hpp"

#ifndef NLCAPI_FIXTURE_DIR
#define NLCAPI_FIXTURE_DIR "fixtures"
#endif

using namespace nlcapi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNumerical = 2;

struct CliError : std::runtime_error {
  CliError(std::string tag, const std::string& what) : std::runtime_error(what), tag(std::move(tag)) {}
  std::string tag;
};

std::string fixture_path(const std::string& name) { return std::string(NLCAPI_FIXTURE_DIR) + "/" + name; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text(path, text);
  }
}

std::string csv_header_line(const Json& header) { return "# " + header.dump() + "\n"; }

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError(what + ": cannot parse '" + item + "' as a number");
    }
  }
  return out;
}

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_list(s, "--hidden")) {
    if (v < 1 || v != std::floor(v)) throw InputError("--hidden: widths must be positive integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string network_hash(const PwaNetwork& net) { return hex64(fnv1a64(network_to_json(net).dump())); }

Json lyapunov_report_json(const LyapunovReport& r) {
  auto witness = [](const std::optional<LyapunovWitness>& w) -> Json {
    if (!w) return nullptr;
    return Json{{"x", vec_to_json(w->x)}, {"r", vec_to_json(w->r)}, {"value", w->value}};
  };
  return Json{{"samples", r.samples},
              {"references", r.references},
              {"zero_violations", r.zero_violations},
              {"positivity_violations", r.positivity_violations},
              {"decrease_violations", r.decrease_violations},
              {"worst_zero", r.worst_zero},
              {"worst_positivity", r.worst_positivity},
              {"worst_decrease", r.worst_decrease},
              {"max_ratio", r.max_ratio},
              {"ok", r.ok()},
              {"zero_witness", witness(r.zero_witness)},
              {"positivity_witness", witness(r.positivity_witness)},
              {"decrease_witness", witness(r.decrease_witness)}};
}

Json verify_json(const VerifyResult& v) {
  return Json{{"verified", v.verified},
              {"opt_value", v.opt_value},
              {"witness_x", v.witness_x.size() ? vec_to_json(v.witness_x) : Json(nullptr)},
              {"witness_r", v.witness_r.size() ? vec_to_json(v.witness_r) : Json(nullptr)},
              {"triples", v.triples},
              {"lps_solved", v.lps_solved},
              {"skipped_level", v.skipped_level},
              {"skipped_bound", v.skipped_bound},
              {"infeasible", v.infeasible},
              {"seconds", v.seconds}};
}

// ---------------------------------------------------------------- shared options

struct Common {
  std::string system = "pendulum";
  std::string weights;
  std::string constraints;
  std::string tree;
  std::string out;
  std::uint64_t seed = 1;
};

struct Pruning {
  bool no_ps1 = false;
  bool no_ps2 = false;
  bool no_box = false;
  bool cap_domain = false;

  LevelOptions options() const {
    LevelOptions o;
    o.use_ps1 = !no_ps1;
    o.use_ps2 = !no_ps2;
    o.use_box_bound = !no_box;
    o.cap_to_domain = cap_domain;
    return o;
  }
};

void add_common(CLI::App* app, Common& c, bool with_constraints, bool with_tree) {
  app->add_option("--system", c.system, "pendulum or cartpole")->check(CLI::IsMember({"pendulum", "cartpole"}));
  app->add_option("--weights", c.weights, "Lyapunov network JSON (default: shipped fixture)");
  if (with_constraints) app->add_option("--constraints", c.constraints, "constraint JSON (default: shipped fixture)");
  if (with_tree) app->add_option("--tree", c.tree, "partition tree cache; built on the fly when absent");
  app->add_option("--out,-o", c.out, "output path (default: stdout)");
  app->add_option("--seed", c.seed, "seed recorded in the artifact header");
}

void add_pruning(CLI::App* app, Pruning& p) {
  app->add_flag("--no-ps1", p.no_ps1, "disable inactive-hyperplane pruning");
  app->add_flag("--no-ps2", p.no_ps2, "disable lower-bound subtree pruning");
  app->add_flag("--no-box", p.no_box, "disable bounding-box pair ordering");
  app->add_flag("--cap-domain", p.cap_domain, "also stop the level at the boundary of the tree domain");
}

struct Context {
  SystemSpec sys;
  PwaNetwork net;
  ConstraintSet cset;
  std::vector<PwaConstraint> constraints;
  PartitionTree tree;
  std::vector<std::string> inputs;
};

Context load(const Common& c, bool need_constraints, bool need_tree) {
  Context ctx;
  ctx.sys = system_by_name(c.system);
  const std::string wpath = c.weights.empty() ? fixture_path(c.system + "_lyapunov.json") : c.weights;
  ctx.net = network_from_json(read_json(wpath));
  ctx.inputs.push_back(wpath);
  if (ctx.net.input_dim() != ctx.sys.state_dim()) {
    throw InputError("weights have input dimension " + std::to_string(ctx.net.input_dim()) + " but " + c.system +
                     " has " + std::to_string(ctx.sys.state_dim()) + " states");
  }
  if (need_constraints) {
    const std::string cpath = c.constraints.empty() ? fixture_path(c.system + "_constraints.json") : c.constraints;
    ctx.cset = constraints_from_json(read_json(cpath), ctx.sys.state_dim());
    ctx.constraints = ctx.cset.all();
    ctx.inputs.push_back(cpath);
  }
  if (need_tree) {
    if (!c.tree.empty()) {
      const Json j = read_json(c.tree);
      if (!j.contains("network_hash") || j.at("network_hash") != network_hash(ctx.net)) {
        throw InputError("tree cache " + c.tree + " was built for a different network");
      }
      ctx.tree = tree_from_json(j);
      ctx.inputs.push_back(c.tree);
    } else {
      ctx.tree = build_partition_tree(ctx.net, Polytope::box(ctx.sys.domain_lo, ctx.sys.domain_hi));
    }
    if (!ctx.tree.annotated()) annotate_lower_bounds(ctx.tree, ctx.net);
  }
  return ctx;
}

EstimatorNet load_estimator(const std::string& path, int ref_dim) {
  const Json j = read_json(path);
  EstimatorNet e;
  e.net = network_from_json(j);
  if (e.net.input_dim() != ref_dim) throw InputError("estimator input dimension does not match the reference");
  const Json meta = j.value("metadata", Json::object());
  e.verified = meta.value("verified", false);
  e.iterations = meta.value("iterations", 0);
  e.dataset_size = meta.value("dataset_size", 0L);
  e.dataset_hash = meta.value("dataset_hash", std::string());
  return e;
}

// ---------------------------------------------------------------- subcommands

int cmd_fixture(const Common& c, const std::string& report_path) {
  const SystemSpec sys = system_by_name(c.system);
  FixtureConfig cfg;
  cfg.seed = c.seed;
  std::vector<int> widths{2, 8, 1};
  if (c.system == "cartpole") {
    widths = {4, 12, 12, 1};
    cfg.zero_bias = true;
    cfg.hidden_noise = 0.03;
  }
  const FixtureResult fx = train_lyapunov_fixture(sys, widths, cfg);
  const Json report = lyapunov_report_json(fx.report);
  Json meta{{"header", artifact_header(c.seed, {})},
            {"system", c.system},
            {"architecture", widths},
            {"zero_bias", cfg.zero_bias},
            {"epochs", fx.epochs},
            {"lyapunov_check", report}};
  emit(c.out, network_to_json(fx.net, meta).dump(2) + "\n");
  if (!report_path.empty()) write_text(report_path, report.dump(2) + "\n");
  return kExitOk;
}

int cmd_check(const Common& c, long samples, int references) {
  const Context ctx = load(c, false, false);
  LyapunovCheckOptions o;
  o.samples = samples;
  o.references = references;
  o.seed = c.seed;
  const LyapunovReport rep = check_lyapunov(ctx.net, ctx.sys, o);
  Json j = lyapunov_report_json(rep);
  j["header"] = artifact_header(c.seed, ctx.inputs);
  emit(c.out, j.dump(2) + "\n");
  if (!rep.ok()) throw CliError("lyapunov", std::to_string(rep.violations()) + " sampled Lyapunov violations");
  return kExitOk;
}

int cmd_build_tree(const Common& c) {
  if (c.out.empty()) throw CliError("usage", "build-tree needs --out");
  Common nc = c;
  nc.tree.clear();
  const Context ctx = load(nc, false, true);
  Json j = tree_to_json(ctx.tree);
  j["header"] = artifact_header(c.seed, ctx.inputs);
  j["network_hash"] = network_hash(ctx.net);
  write_text(c.out, j.dump() + "\n");
  const auto& st = ctx.tree.stats();
  std::cout << Json{{"nodes", st.node_count},
                    {"leaves", st.leaf_count},
                    {"build_seconds", st.build_seconds},
                    {"annotate_seconds", st.annotate_seconds}}
                   .dump()
            << "\n";
  return kExitOk;
}

std::vector<double> sweep_values(const std::optional<double>& r, const std::string& sweep) {
  if (r && !sweep.empty()) throw CliError("usage", "--r and --sweep are exclusive");
  if (r) return {*r};
  if (sweep.empty()) return {0.0};
  const auto p = parse_list(sweep, "--sweep");
  if (p.size() != 3 || p[2] < 1 || p[2] != std::floor(p[2]) || p[0] > p[1]) {
    throw InputError("--sweep expects lo,hi,count with lo <= hi and count >= 1");
  }
  const int n = static_cast<int>(p[2]);
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(n == 1 ? p[0] : p[0] + (p[1] - p[0]) * i / (n - 1));
  return out;
}

int cmd_gamma(const Common& c, const Pruning& pr, std::optional<double> r, const std::string& sweep, int workers,
              int oracle_grid) {
  const Context ctx = load(c, true, true);
  if (ctx.sys.reference_dim() != 1) throw InputError("gamma: scalar references only");
  const std::vector<double> rs = sweep_values(r, sweep);
  const LevelSolver solver(ctx.tree, ctx.net, ctx.sys.emap, ctx.constraints);
  const LevelOptions opts = pr.options();

  std::vector<std::string> rows(rs.size());
  std::vector<std::string> errors(rs.size());
  auto run = [&](std::size_t i) {
    try {
      const LevelResult res = solver.solve(Vec::Constant(1, rs[i]), opts);
      rows[i] = fmt(rs[i]) + "," + fmt(res.gamma_star) + "," + (res.unbounded ? "1" : "0") + "," + res.binding +
                "," + std::to_string(res.counters.lps_solved) + "," + std::to_string(res.counters.pruned_ps1) +
                "," + std::to_string(res.counters.pruned_ps2) + "," + std::to_string(res.counters.pruned_box) +
                "," + fmt(res.seconds);
      if (oracle_grid > 0) {
        rows[i] += "," + fmt(grid_oracle_gamma(ctx.net, ctx.sys.emap, ctx.constraints, Vec::Constant(1, rs[i]),
                                               ctx.sys.domain_lo, ctx.sys.domain_hi, oracle_grid));
      }
    } catch (const InfeasibleReference&) {
      rows[i] = fmt(rs[i]) + ",nan,0,infeasible_reference,0,0,0,0,0" + (oracle_grid > 0 ? ",nan" : "");
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  const int nw = std::max(1, std::min<int>(workers, static_cast<int>(rs.size())));
  if (nw == 1) {
    for (std::size_t i = 0; i < rs.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < rs.size(); i += nw) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw NumericalFailure(e);
  }
  Json header = artifact_header(c.seed, ctx.inputs);
  header["options"] = {{"ps1", opts.use_ps1}, {"ps2", opts.use_ps2}, {"box", opts.use_box_bound},
                       {"cap_domain", opts.cap_to_domain}};
  std::string csv = csv_header_line(header) + "r,gamma,unbounded,binding,lps,pruned_ps1,pruned_ps2,pruned_box,seconds";
  csv += oracle_grid > 0 ? ",grid_gamma\n" : "\n";
  for (const auto& row : rows) csv += row + "\n";
  emit(c.out, csv);
  return kExitOk;
}

int cmd_train(const Common& c, const Pruning& pr, const std::string& hidden, double margin, int max_iters,
              const std::string& report_path) {
  Context ctx = load(c, true, true);
  const LevelSolver solver(ctx.tree, ctx.net, ctx.sys.emap, ctx.constraints);
  const LevelOptions opts = pr.options();
  const LevelOracle q = [&](const Vec& r) { return solver.solve(r, opts).gamma_star; };
  EstimatorConfig cfg;
  cfg.hidden = parse_widths(hidden);
  cfg.margin = margin;
  cfg.max_iters = max_iters;
  cfg.seed = c.seed;
  TrainLog log;
  const Polytope rdom = Polytope::box(ctx.sys.ref_lo, ctx.sys.ref_hi);
  const auto t0 = std::chrono::steady_clock::now();
  Json report;
  auto fill_report = [&] {
    Json its = Json::array();
    for (const auto& v : log.verifications) its.push_back(verify_json(v));
    report = Json{{"header", artifact_header(c.seed, ctx.inputs)},
                  {"iterations", its},
                  {"dataset_size", log.dataset.size()},
                  {"seconds", seconds_since(t0)}};
  };
  try {
    const EstimatorNet est = train_estimator(q, ctx.tree, ctx.net, ctx.sys.emap, ctx.constraints, rdom, cfg, &log);
    fill_report();
    Json meta{{"header", artifact_header(c.seed, ctx.inputs)},
              {"system", c.system},
              {"verified", est.verified},
              {"iterations", est.iterations},
              {"dataset_size", est.dataset_size},
              {"dataset_hash", est.dataset_hash},
              {"margin", margin},
              {"hidden", cfg.hidden},
              {"cap_domain", opts.cap_to_domain}};
    emit(c.out, network_to_json(est.net, meta).dump(2) + "\n");
    if (!report_path.empty()) write_text(report_path, report.dump(2) + "\n");
  } catch (const Unverified& e) {
    fill_report();
    if (!report_path.empty()) write_text(report_path, report.dump(2) + "\n");
    throw CliError("unverified", e.what());
  }
  return kExitOk;
}

int cmd_verify(const Common& c, const std::string& estimator) {
  Context ctx = load(c, true, true);
  const std::string epath = estimator.empty() ? fixture_path(c.system + "_estimator.json") : estimator;
  const EstimatorNet est = load_estimator(epath, ctx.sys.reference_dim());
  ctx.inputs.push_back(epath);
  const VerifyResult v = verify_estimator(ctx.tree, ctx.net, ctx.sys.emap, est, ctx.constraints,
                                          Polytope::box(ctx.sys.ref_lo, ctx.sys.ref_hi));
  Json j = verify_json(v);
  j["header"] = artifact_header(c.seed, ctx.inputs);
  emit(c.out, j.dump(2) + "\n");
  if (!v.verified) throw CliError("unverified", "estimator admits a constraint violation of " + fmt(v.opt_value));
  return kExitOk;
}

int cmd_erg(const Common& c, const Pruning& pr, const std::string& estimator, bool exact, const std::string& x0s,
            double r, std::optional<double> v0, double eta, int horizon, bool no_governor) {
  Context ctx = load(c, true, exact);
  if (ctx.sys.reference_dim() != 1) throw InputError("simulate-erg: scalar references only");
  const std::vector<double> x0v = parse_list(x0s, "--x0");
  if (static_cast<int>(x0v.size()) != ctx.sys.state_dim()) throw InputError("--x0 has the wrong number of entries");
  const Vec x0 = Eigen::Map<const Vec>(x0v.data(), static_cast<Eigen::Index>(x0v.size()));

  std::optional<LevelSolver> solver;
  LevelSource level;
  if (exact) {
    solver.emplace(ctx.tree, ctx.net, ctx.sys.emap, ctx.constraints);
    level = exact_level_source(*solver, pr.options());
  } else {
    const std::string epath = estimator.empty() ? fixture_path(c.system + "_estimator.json") : estimator;
    level = estimator_level_source(load_estimator(epath, 1));
    ctx.inputs.push_back(epath);
  }
  ErgConfig cfg;
  cfg.eta = eta;
  cfg.dt = ctx.sys.tau;
  cfg.horizon = horizon;
  cfg.governor = !no_governor;
  if (!(eta > 0.0)) throw InputError("--eta must be positive");

  Json header = artifact_header(c.seed, ctx.inputs);
  header["erg"] = {{"eta", eta}, {"r", r}, {"horizon", horizon}, {"governor", cfg.governor},
                   {"level", exact ? "exact" : "estimator"}, {"x0", x0v}};
  header["constraints"] = Json::array();
  for (const auto& k : ctx.constraints) header["constraints"].push_back(k.name);
  try {
    const ErgTrajectory tr = simulate_erg(ctx.sys, ctx.net, level, ctx.constraints, x0, r, cfg, v0);
    emit(c.out, csv_header_line(header) + trajectory_csv(tr));
  } catch (const ConstraintViolated& e) {
    emit(c.out, csv_header_line(header) + trajectory_csv(e.partial));
    throw CliError("violation", e.what());
  }
  return kExitOk;
}

// One timing row per swept constraint parameter.
// |x_coord| <= value for each swept value.
struct BenchParam {
  std::string name;
  int coord;
};

int cmd_bench(const Common& c, int values, int reps, int warmup, bool skip_train) {
  if (values < 1 || reps < 1 || warmup < 0) throw InputError("bench: values and reps must be positive");
  const SystemSpec sys = system_by_name(c.system);
  Common nc = c;
  nc.tree.clear();
  const auto tb = std::chrono::steady_clock::now();
  Context ctx = load(nc, false, true);
  const double build_s = seconds_since(tb);

  std::vector<BenchParam> params;
  if (c.system == "pendulum") {
    params = {{"theta_max", 0}, {"theta_dot_max", 1}};
  } else {
    params = {{"theta_max", 2}, {"x_dot_max", 1}, {"x_max", 0}};
  }
  const int n = sys.state_dim();
  std::string csv = csv_header_line(artifact_header(c.seed, ctx.inputs)) +
                    "system,parameter,values,build_s,partitions,wp_mean_ms,wp_max_ms,wop_mean_ms,wop_max_ms,"
                    "wp_lps_mean,wop_lps_mean,train_s,inference_mean_us\n";

  LevelOptions wp;
  LevelOptions wop;
  wop.use_ps1 = wop.use_ps2 = wop.use_box_bound = false;
  if (c.system == "cartpole") wp.use_ps2 = false;  // zero bias: every leaf minimum is 0

  for (const auto& p : params) {
    std::vector<std::unique_ptr<LevelSolver>> solvers;
    for (int k = 0; k < values; ++k) {
      const double m = values == 1 ? 0.05 : 0.05 + 0.95 * k / (values - 1);
      std::vector<std::optional<double>> lo(n), hi(n);
      lo[p.coord] = -m;
      hi[p.coord] = m;
      solvers.push_back(std::make_unique<LevelSolver>(ctx.tree, ctx.net, sys.emap, box_constraints(lo, hi)));
    }
    const Vec r0 = Vec::Zero(sys.reference_dim());
    auto time_queries = [&](const LevelOptions& o, double& mean_ms, double& max_ms, double& lps) {
      for (int i = 0; i < warmup; ++i) solvers[i % values]->solve(r0, o);
      double sum = 0.0, mx = 0.0;
      long lp_sum = 0;
      for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const LevelResult res = solvers[i % values]->solve(r0, o);
        const double ms = 1e3 * seconds_since(t0);
        sum += ms;
        mx = std::max(mx, ms);
        lp_sum += res.counters.lps_solved;
      }
      mean_ms = sum / reps;
      max_ms = mx;
      lps = static_cast<double>(lp_sum) / reps;
    };
    double wp_mean, wp_max, wp_lps, wop_mean, wop_max, wop_lps;
    time_queries(wp, wp_mean, wp_max, wp_lps);
    time_queries(wop, wop_mean, wop_max, wop_lps);

    // Estimator on the middle of the sweep.
    double train_s = std::numeric_limits<double>::quiet_NaN();
    double infer_us = std::numeric_limits<double>::quiet_NaN();
    if (!skip_train) {
      const LevelSolver& mid = *solvers[values / 2];
      const LevelOracle q = [&](const Vec& r) { return mid.solve(r, wp).gamma_star; };
      EstimatorConfig ecfg;
      ecfg.seed = c.seed;
      const auto tt = std::chrono::steady_clock::now();
      const EstimatorNet est = train_estimator(q, ctx.tree, ctx.net, sys.emap, mid.constraints(),
                                               Polytope::box(sys.ref_lo, sys.ref_hi), ecfg);
      train_s = seconds_since(tt);
      const int calls = 10000;
      double sink = 0.0;
      const auto ti = std::chrono::steady_clock::now();
      for (int i = 0; i < calls; ++i) {
        sink += est(Vec::Constant(1, sys.ref_lo[0] + (sys.ref_hi[0] - sys.ref_lo[0]) * i / calls));
      }
      infer_us = 1e6 * seconds_since(ti) / calls;
      if (!std::isfinite(sink)) throw NumericalFailure("bench: estimator produced a non-finite value");
    }
    csv += c.system + "," + p.name + "," + std::to_string(values) + "," + fmt(build_s) + "," +
           std::to_string(ctx.tree.leaves().size()) + "," + fmt(wp_mean) + "," + fmt(wp_max) + "," + fmt(wop_mean) +
           "," + fmt(wop_max) + "," + fmt(wp_lps) + "," + fmt(wop_lps) + "," + fmt(train_s) + "," + fmt(infer_us) +
           "\n";
  }
  emit(c.out, csv);
  return kExitOk;
}

int report(const std::string& tag, const std::string& what, int code) {
  std::cerr << "error[" << tag << "]: " << what << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constraint-admissible level sets of piecewise-affine neural Lyapunov functions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common common;
  Pruning pruning;

  auto* fixture = app.add_subcommand("fixture", "generate the Lyapunov network for a system");
  std::string report_path;
  add_common(fixture, common, false, false);
  fixture->add_option("--report", report_path, "write the sampled Lyapunov check here");

  auto* check = app.add_subcommand("check-lyapunov", "sampled Lyapunov conditions");
  long samples = 10000;
  int references = 5;
  add_common(check, common, false, false);
  check->add_option("--samples", samples, "states per reference")->check(CLI::PositiveNumber);
  check->add_option("--references", references, "number of references")->check(CLI::PositiveNumber);

  auto* build = app.add_subcommand("build-tree", "partition tree of the Lyapunov network");
  add_common(build, common, false, false);

  auto* gamma = app.add_subcommand("gamma", "largest admissible level for one reference or a sweep");
  std::optional<double> r_opt;
  std::string sweep;
  int workers = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  add_common(gamma, common, true, true);
  add_pruning(gamma, pruning);
  gamma->add_option("--r", r_opt, "reference");
  gamma->add_option("--sweep", sweep, "lo,hi,count");
  gamma->add_option("--workers", workers, "parallel queries in a sweep")->check(CLI::PositiveNumber);
  int oracle_grid = 0;
  gamma->add_option("--oracle-grid", oracle_grid, "add a grid reference column at this resolution")
      ->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train-estimator", "counterexample-guided level estimator");
  std::string hidden = "8,4";
  double margin = 0.02;
  int max_iters = 50;
  add_common(train, common, true, true);
  add_pruning(train, pruning);
  train->add_option("--hidden", hidden, "hidden widths, comma separated");
  train->add_option("--margin", margin, "relative target shrink");
  train->add_option("--max-iters", max_iters, "verification rounds")->check(CLI::PositiveNumber);
  train->add_option("--report", report_path, "write per-iteration verification results here");

  auto* verify = app.add_subcommand("verify", "exact check of an estimator against the constraints");
  std::string estimator;
  add_common(verify, common, true, true);
  verify->add_option("--estimator", estimator, "estimator JSON (default: shipped fixture)");

  auto* erg = app.add_subcommand("simulate-erg", "closed loop with the explicit reference governor");
  bool exact = false, no_governor = false;
  std::string x0s;
  double r_target = 0.0, eta = 2.0;
  std::optional<double> v0;
  int horizon = 600;
  add_common(erg, common, true, true);
  add_pruning(erg, pruning);
  erg->add_option("--estimator", estimator, "estimator JSON (default: shipped fixture)");
  erg->add_flag("--exact", exact, "query the exact level at every step");
  erg->add_option("--x0", x0s, "initial state, comma separated")->required();
  erg->add_option("--r", r_target, "target reference")->required();
  erg->add_option("--v0", v0, "initial applied reference (default: grid search)");
  erg->add_option("--eta", eta, "margin gain");
  erg->add_option("--horizon", horizon, "steps")->check(CLI::NonNegativeNumber);
  erg->add_flag("--no-governor", no_governor, "apply the target from the first step");

  auto* bench = app.add_subcommand("bench", "timing table over constraint sweeps");
  int values = 20, reps = 100, warmup = 10;
  bool skip_train = false;
  add_common(bench, common, false, false);
  bench->add_option("--values", values, "sweep points from 0.05 to 1.0")->check(CLI::PositiveNumber);
  bench->add_option("--reps", reps, "timed queries per parameter")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", warmup, "untimed queries first")->check(CLI::NonNegativeNumber);
  bench->add_flag("--skip-train", skip_train, "leave the estimator columns empty");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), kExitInvalid);
  }

  try {
    if (*fixture) return cmd_fixture(common, report_path);
    if (*check) return cmd_check(common, samples, references);
    if (*build) return cmd_build_tree(common);
    if (*gamma) return cmd_gamma(common, pruning, r_opt, sweep, workers, oracle_grid);
    if (*train) return cmd_train(common, pruning, hidden, margin, max_iters, report_path);
    if (*verify) return cmd_verify(common, estimator);
    if (*erg) return cmd_erg(common, pruning, estimator, exact, x0s, r_target, v0, eta, horizon, no_governor);
    if (*bench) return cmd_bench(common, values, reps, warmup, skip_train);
  } catch (const CliError& e) {
    return report(e.tag, e.what(), kExitInvalid);
  } catch (const FileError& e) {
    return report("io", e.what(), kExitInvalid);
  } catch (const SchemaError& e) {
    return report("schema", e.what(), kExitInvalid);
  } catch (const TrainingFailed& e) {
    return report("training", e.what(), kExitInvalid);
  } catch (const InputError& e) {
    return report("input", e.what(), kExitInvalid);
  } catch (const NumericalFailure& e) {
    return report("numerical", e.what(), kExitNumerical);
  } catch (const std::exception& e) {
    return report("internal", e.what(), kExitNumerical);
  }
  return kExitInvalid;
}
