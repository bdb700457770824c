#include "nlcapi/erg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "nlcapi/errors.hpp"

namespace nlcapi {

namespace {

Vec scalar(double v) { return Vec::Constant(1, v); }

}  // namespace

LevelSource exact_level_source(const LevelSolver& solver, LevelOptions opts) {
  return [&solver, opts](double v) { return solver.solve(scalar(v), opts).gamma_star; };
}

LevelSource estimator_level_source(EstimatorNet est) {
  return [est = std::move(est)](double v) { return est(scalar(v)); };
}

double dsm(double gamma_star, double v_value, double eta) { return eta * (gamma_star - v_value); }

double navigation_field(double r, double v) { return r > v ? 1.0 : (r < v ? -1.0 : 0.0); }

ErgStep erg_step(const PwaNetwork& v_net, const ReferenceMap& emap, const LevelSource& level, const Vec& x,
                 double v, double r, double r_lo, double r_hi, const ErgConfig& cfg) {
  if (!(cfg.eta > 0.0) || !(cfg.dt > 0.0)) throw InputError("erg_step: eta and dt must be positive");
  ErgStep s;
  s.level = level(v);
  s.value = rdlf_value(v_net, emap, x, scalar(v));
  s.delta = dsm(s.level, s.value, cfg.eta);
  const double rho = navigation_field(r, v);
  double next = v + cfg.dt * std::max(s.delta, 0.0) * rho;
  if ((rho > 0.0 && next > r) || (rho < 0.0 && next < r)) next = r;
  s.v_next = std::clamp(next, r_lo, r_hi);
  return s;
}

double initial_reference(const PwaNetwork& v_net, const ReferenceMap& emap, const LevelSource& level,
                         const Vec& x0, double r_lo, double r_hi, int grid) {
  if (grid < 2 || !(r_lo <= r_hi)) throw InputError("initial_reference: bad grid");
  double best_v = 0.0, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double v = r_lo + (r_hi - r_lo) * i / (grid - 1);
    const double value = rdlf_value(v_net, emap, x0, scalar(v));
    if (value >= best) continue;
    double g;
    try {
      g = level(v);
    } catch (const InfeasibleReference&) {
      continue;
    }
    if (value <= g) {
      best = value;
      best_v = v;
    }
  }
  if (!std::isfinite(best)) throw InputError("initial_reference: x0 is outside every admissible sublevel set");
  return best_v;
}

ErgTrajectory simulate_erg(const SystemSpec& sys, const PwaNetwork& v_net, const LevelSource& level,
                           const std::vector<PwaConstraint>& constraints, const Vec& x0, double r,
                           const ErgConfig& cfg, std::optional<double> v0) {
  if (sys.ref_lo.size() != 1) throw InputError("simulate_erg: scalar references only");
  if (x0.size() != sys.state_dim()) throw InputError("simulate_erg: x0 has the wrong dimension");
  if (cfg.horizon < 0) throw InputError("simulate_erg: negative horizon");
  const double r_lo = sys.ref_lo[0], r_hi = sys.ref_hi[0];
  if (r < r_lo || r > r_hi) throw InputError("simulate_erg: target reference outside the reference domain");

  ErgTrajectory traj;
  for (const auto& c : constraints) traj.constraint_names.push_back(c.name);
  double v = cfg.governor ? (v0 ? *v0 : initial_reference(v_net, sys.emap, level, x0, r_lo, r_hi, cfg.v0_grid))
                          : r;
  traj.v0 = v;
  const Vec xr = sys.emap.equilibrium(scalar(r));

  Vec x = x0;
  for (int k = 0;; ++k) {
    ErgRecord rec;
    rec.t = k * cfg.dt;
    rec.x = x;
    rec.v = v;
    rec.u = sys.control(x, scalar(v));
    const ErgStep s = erg_step(v_net, sys.emap, level, x, v, r, r_lo, r_hi, cfg);
    rec.delta = s.delta;
    rec.value = s.value;
    rec.level = s.level;
    int worst = -1;
    for (std::size_t i = 0; i < constraints.size(); ++i) {
      rec.c.push_back(constraints[i](x));
      if (rec.c.back() > cfg.violation_tol && worst < 0) worst = static_cast<int>(i);
    }
    traj.records.push_back(std::move(rec));
    if (worst >= 0) {
      throw ConstraintViolated("simulate_erg: constraint '" + constraints[worst].name + "' violated at step " +
                                   std::to_string(k),
                               k, x, std::move(traj));
    }
    if (k == cfg.horizon) break;
    if (cfg.stop_when_settled && std::abs(v - r) < 1e-4 && (x - xr).norm() < 1e-3) break;
    x = sys.step(x, traj.records.back().u);
    if (cfg.governor) v = s.v_next;
  }
  return traj;
}

std::string trajectory_csv(const ErgTrajectory& traj) {
  std::string out = "t";
  const int n = traj.records.empty() ? 0 : static_cast<int>(traj.records.front().x.size());
  for (int i = 1; i <= n; ++i) out += ",x_" + std::to_string(i);
  out += ",u,v,Delta,V,Gamma";
  for (std::size_t i = 1; i <= traj.constraint_names.size(); ++i) out += ",c_" + std::to_string(i);
  out += "\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out += buf;
  };
  for (const auto& rec : traj.records) {
    std::snprintf(buf, sizeof buf, "%.17g", rec.t);
    out += buf;
    for (int i = 0; i < n; ++i) put(rec.x[i]);
    put(rec.u);
    put(rec.v);
    put(rec.delta);
    put(rec.value);
    put(rec.level);
    for (double c : rec.c) put(c);
    out += "\n";
  }
  return out;
}

}  // namespace nlcapi
