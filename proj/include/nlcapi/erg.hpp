#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlcapi/capi.hpp"
#include "nlcapi/estimator.hpp"
#include "nlcapi/pwanet.hpp"
#include "nlcapi/systems.hpp"

namespace nlcapi {

/// Admissible level for a scalar reference.
using LevelSource = std::function<double(double v)>;

/// Gamma*(v) from the exact solver. The solver must outlive the source.
LevelSource exact_level_source(const LevelSolver& solver, LevelOptions opts = {});
LevelSource estimator_level_source(EstimatorNet est);

struct ErgConfig {
  double eta = 2.0;
  double dt = 0.05;
  int horizon = 600;
  /// false applies v = r from the first step (the unguarded baseline).
  bool governor = true;
  /// Stop once |v - r| < 1e-4 and |x - E r| < 1e-3.
  bool stop_when_settled = true;
  /// Largest constraint value tolerated on a logged state.
  double violation_tol = 1e-8;
  /// Grid size for choosing the initial reference.
  int v0_grid = 401;
};

/// eta * (gamma_star - v_value)
double dsm(double gamma_star, double v_value, double eta);

/// Sign of r - v.
double navigation_field(double r, double v);

struct ErgStep {
  double v_next = 0.0;
  double delta = 0.0;
  double level = 0.0;
  double value = 0.0;  // V(x, v)
};

/// One Euler step of v' = max(Delta, 0) rho(r, v), clipped at r and clamped to [r_lo, r_hi].
ErgStep erg_step(const PwaNetwork& v_net, const ReferenceMap& emap, const LevelSource& level, const Vec& x,
                 double v, double r, double r_lo, double r_hi, const ErgConfig& cfg);

struct ErgRecord {
  double t = 0.0;
  Vec x;
  double u = 0.0;
  double v = 0.0;
  double delta = 0.0;
  double value = 0.0;
  double level = 0.0;
  std::vector<double> c;
};

struct ErgTrajectory {
  std::vector<ErgRecord> records;
  std::vector<std::string> constraint_names;
  double v0 = 0.0;
};

struct ConstraintViolated : std::runtime_error {
  ConstraintViolated(const std::string& what, int step, Vec witness, ErgTrajectory partial)
      : std::runtime_error(what), step(step), witness(std::move(witness)), partial(std::move(partial)) {}
  int step;
  Vec witness;
  ErgTrajectory partial;
};

/// Reference on a grid over [r_lo, r_hi] minimizing V(x0, v) subject to V(x0, v) <= level(v).
double initial_reference(const PwaNetwork& v_net, const ReferenceMap& emap, const LevelSource& level,
                         const Vec& x0, double r_lo, double r_hi, int grid);

/// Closed-loop run. Throws ConstraintViolated on the first logged state with c > violation_tol.
ErgTrajectory simulate_erg(const SystemSpec& sys, const PwaNetwork& v_net, const LevelSource& level,
                           const std::vector<PwaConstraint>& constraints, const Vec& x0, double r,
                           const ErgConfig& cfg, std::optional<double> v0 = std::nullopt);

/// Columns: t, x_1..x_n, u, v, Delta, V, Gamma, then one per constraint.
std::string trajectory_csv(const ErgTrajectory& traj);

}  // namespace nlcapi
