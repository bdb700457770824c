#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlcapi/pwanet.hpp"

namespace nlcapi {

struct PendulumParams {
  double g = 9.81;
  double m = 0.15;
  double l = 0.5;
  double b = 0.1;
  double tau = 0.05;
};

struct CartPoleParams {
  double m_cart = 1.0;
  double m_pole = 0.1;
  double l = 1.0;
  double g = 9.81;
  double tau = 0.05;
};

/// theta_ddot for state [theta, theta_dot].
double pendulum_accel(const Vec& x, double u, const PendulumParams& p = {});
/// Explicit Euler step of the pendulum.
Vec pendulum_step(const Vec& x, double u, const PendulumParams& p = {});

/// (x_ddot, theta_ddot) for state [x, x_dot, theta, theta_dot].
std::pair<double, double> cartpole_accel(const Vec& x, double f, const CartPoleParams& p = {});
Vec cartpole_step(const Vec& x, double f, const CartPoleParams& p = {});

/// u = sat(K (x - x_ref)).
struct LinearPolicy {
  Vec K;
  double u_min = -std::numeric_limits<double>::infinity();
  double u_max = std::numeric_limits<double>::infinity();

  double operator()(const Vec& x, const Vec& x_ref) const;
};

struct SystemSpec {
  std::string name;
  std::function<Vec(const Vec&, double)> step;  // (x, u) -> x'
  ReferenceMap emap;
  LinearPolicy policy;
  double tau = 0.05;
  Vec domain_lo, domain_hi;  // fixture domain D, relative to the equilibrium
  Vec ref_lo, ref_hi;        // admissible references R

  int state_dim() const { return emap.state_dim(); }
  int reference_dim() const { return emap.reference_dim(); }
  double control(const Vec& x, const Vec& r) const { return policy(x, emap.equilibrium(r)); }
  Vec closed_loop(const Vec& x, const Vec& r) const { return step(x, control(x, r)); }
};

SystemSpec pendulum_system(const PendulumParams& p = {});
/// delta shrinks the position reference range away from the constraint bounds.
SystemSpec cartpole_system(const CartPoleParams& p = {}, double delta = 1e-3);
/// "pendulum" or "cartpole"; InputError otherwise.
SystemSpec system_by_name(const std::string& name);

struct LyapunovWitness {
  Vec x;
  Vec r;
  double value = 0.0;
};

struct LyapunovReport {
  long samples = 0;
  long references = 0;
  long zero_violations = 0;        // |V(x_ref, r)| > zero_tol
  long positivity_violations = 0;  // V(x, r) <= 0 with x != x_ref
  long decrease_violations = 0;    // V(f(x, r), r) - V(x, r) > decrease_tol
  double worst_zero = 0.0;
  double worst_positivity = 0.0;   // most negative V
  double worst_decrease = 0.0;     // largest increase
  double max_ratio = 0.0;          // max V(f) / V over samples with V > 0
  std::optional<LyapunovWitness> zero_witness, positivity_witness, decrease_witness;

  long violations() const { return zero_violations + positivity_violations + decrease_violations; }
  bool ok() const { return violations() == 0; }
};

struct LyapunovCheckOptions {
  long samples = 10000;
  int references = 5;
  std::uint64_t seed = 1;
  double zero_tol = 1e-12;
  double decrease_tol = 0.0;
};

/// States are drawn uniformly from D + x_ref for references drawn uniformly from R.
LyapunovReport check_lyapunov(const PwaNetwork& net, const SystemSpec& sys,
                              const LyapunovCheckOptions& opts = {});

struct TrainingFailed : std::runtime_error {
  TrainingFailed(const std::string& what, LyapunovReport r) : std::runtime_error(what), report(std::move(r)) {}
  LyapunovReport report;
};

struct FixtureConfig {
  std::uint64_t seed = 7;
  bool zero_bias = false;
  /// Start from the polyhedral seed when the first hidden layer is wide enough.
  bool modal_seed = true;
  /// Relative noise added to identity hidden layers of the seed.
  double hidden_noise = 0.0;
  /// Output weight of the extra dead-zone neurons of the seed.
  double deadzone_weight = 0.5;
  double deadzone_offset = 0.3;
  int max_epochs = 3000;
  int batch = 256;
  double lr = 3e-3;
  double positivity_margin = 0.05;  // V(x) >= margin * |x|_inf
  double decrease_margin = 0.01;    // V(f(x)) <= V(x) - margin * |x|_inf
  int check_every = 50;
  long validation_samples = 10000;
  int stability_rollouts = 20;
};

struct FixtureResult {
  PwaNetwork net;
  LyapunovReport report;  // fresh validation samples
  int epochs = 0;         // 0 when the seed passed directly
};

/// widths = {n, w_1, ..., 1}. Throws TrainingFailed when the budget runs out
/// and InputError when the closed loop does not settle from sampled states.
FixtureResult train_lyapunov_fixture(const SystemSpec& sys, const std::vector<int>& widths,
                                     const FixtureConfig& cfg = {});

/// Jacobian of the closed loop at the equilibrium of r = 0 (central differences).
Mat closed_loop_jacobian(const SystemSpec& sys, double h = 1e-6);

}  // namespace nlcapi
