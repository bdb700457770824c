#include "nlcapi/systems.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "nlcapi/errors.hpp"
#include "nlcapi/mlp.hpp"

namespace nlcapi {

double pendulum_accel(const Vec& x, double u, const PendulumParams& p) {
  return (p.m * p.g * p.l * std::sin(x[0]) + u - p.b * x[1]) / (p.m * p.l * p.l);
}

Vec pendulum_step(const Vec& x, double u, const PendulumParams& p) {
  if (x.size() != 2) throw InputError("pendulum_step: state must have 2 entries");
  Vec out(2);
  out << x[0] + p.tau * x[1], x[1] + p.tau * pendulum_accel(x, u, p);
  return out;
}

std::pair<double, double> cartpole_accel(const Vec& x, double f, const CartPoleParams& p) {
  const double th = x[2], thd = x[3];
  const double s = std::sin(th), c = std::cos(th);
  const double den = p.m_cart + p.m_pole * s * s;
  const double xdd = (f + p.m_pole * s * (p.l * thd * thd - p.g * c)) / den;
  const double thdd =
      (-(f + p.m_pole * p.l * thd * thd * s) * c + (p.m_cart + p.m_pole) * p.g * s) / (p.l * den);
  return {xdd, thdd};
}

Vec cartpole_step(const Vec& x, double f, const CartPoleParams& p) {
  if (x.size() != 4) throw InputError("cartpole_step: state must have 4 entries");
  auto [xdd, thdd] = cartpole_accel(x, f, p);
  Vec out(4);
  out << x[0] + p.tau * x[1], x[1] + p.tau * xdd, x[2] + p.tau * x[3], x[3] + p.tau * thdd;
  return out;
}

double LinearPolicy::operator()(const Vec& x, const Vec& x_ref) const {
  return std::clamp(K.dot(x - x_ref), u_min, u_max);
}

SystemSpec pendulum_system(const PendulumParams& p) {
  SystemSpec s;
  s.name = "pendulum";
  s.step = [p](const Vec& x, double u) { return pendulum_step(x, u, p); };
  s.emap.E = Mat::Zero(2, 1);
  s.policy.K = Vec(2);
  s.policy.K << -2.20, -0.638;
  s.policy.u_min = -6.0;
  s.policy.u_max = 6.0;
  s.tau = p.tau;
  s.domain_lo = Vec::Constant(2, -1.0);
  s.domain_hi = Vec::Constant(2, 1.0);
  s.ref_lo = Vec::Constant(1, -1.0);
  s.ref_hi = Vec::Constant(1, 1.0);
  return s;
}

SystemSpec cartpole_system(const CartPoleParams& p, double delta) {
  SystemSpec s;
  s.name = "cartpole";
  s.step = [p](const Vec& x, double f) { return cartpole_step(x, f, p); };
  s.emap.E = Mat::Zero(4, 1);
  s.emap.E(0, 0) = 1.0;
  s.policy.K = Vec(4);
  s.policy.K << 1.09, 1.81, 34.6, 11.3;
  s.tau = p.tau;
  s.domain_lo = Vec(4);
  s.domain_lo << -1.0, -1.0, -0.3, -1.0;
  s.domain_hi = -s.domain_lo;
  s.ref_lo = Vec::Constant(1, -0.7 + delta);
  s.ref_hi = Vec::Constant(1, 0.4 - delta);
  return s;
}

SystemSpec system_by_name(const std::string& name) {
  if (name == "pendulum") return pendulum_system();
  if (name == "cartpole") return cartpole_system();
  throw InputError("unknown system '" + name + "' (expected pendulum or cartpole)");
}

namespace {

Vec uniform_box(std::mt19937_64& rng, const Vec& lo, const Vec& hi) {
  Vec x(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    x[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
  }
  return x;
}

}  // namespace

LyapunovReport check_lyapunov(const PwaNetwork& net, const SystemSpec& sys,
                              const LyapunovCheckOptions& opts) {
  if (net.input_dim() != sys.state_dim()) throw InputError("check_lyapunov: dimension mismatch");
  if (opts.references < 1) throw InputError("check_lyapunov: need at least one reference");
  std::mt19937_64 rng(opts.seed);
  LyapunovReport rep;
  rep.references = opts.references;
  std::vector<Vec> refs;
  for (int k = 0; k < opts.references; ++k) refs.push_back(uniform_box(rng, sys.ref_lo, sys.ref_hi));

  for (const Vec& r : refs) {
    const double v0 = rdlf_value(net, sys.emap, sys.emap.equilibrium(r), r);
    if (std::abs(v0) > opts.zero_tol) {
      ++rep.zero_violations;
      if (std::abs(v0) > rep.worst_zero) {
        rep.worst_zero = std::abs(v0);
        rep.zero_witness = LyapunovWitness{sys.emap.equilibrium(r), r, v0};
      }
    }
  }

  for (long i = 0; i < opts.samples; ++i) {
    const Vec& r = refs[static_cast<std::size_t>(i % opts.references)];
    const Vec xr = sys.emap.equilibrium(r);
    const Vec x = xr + uniform_box(rng, sys.domain_lo, sys.domain_hi);
    ++rep.samples;
    const double v = rdlf_value(net, sys.emap, x, r);
    if ((x - xr).lpNorm<Eigen::Infinity>() > 0.0 && v <= 0.0) {
      ++rep.positivity_violations;
      if (!rep.positivity_witness || v < rep.worst_positivity) {
        rep.worst_positivity = v;
        rep.positivity_witness = LyapunovWitness{x, r, v};
      }
    }
    const double vn = rdlf_value(net, sys.emap, sys.closed_loop(x, r), r);
    if (v > 0.0) rep.max_ratio = std::max(rep.max_ratio, vn / v);
    const double inc = vn - v;
    if (inc > opts.decrease_tol) {
      ++rep.decrease_violations;
      if (inc > rep.worst_decrease) {
        rep.worst_decrease = inc;
        rep.decrease_witness = LyapunovWitness{x, r, inc};
      }
    }
  }
  return rep;
}

Mat closed_loop_jacobian(const SystemSpec& sys, double h) {
  const int n = sys.state_dim();
  const Vec r = Vec::Zero(sys.reference_dim());
  Mat J(n, n);
  for (int j = 0; j < n; ++j) {
    Vec e = Vec::Zero(n);
    e[j] = h;
    J.col(j) = (sys.closed_loop(e, r) - sys.closed_loop(-e, r)) / (2.0 * h);
  }
  return J;
}

namespace {

/// Piecewise-linear Lyapunov seed: |.| of the modal coordinates of the
/// linearization, with several directions per rotating mode. Returns nullopt
/// when the architecture cannot hold it.
std::optional<PwaNetwork> modal_seed(const SystemSpec& sys, const std::vector<int>& widths,
                                     const FixtureConfig& cfg, std::mt19937_64& rng) {
  const int n = sys.state_dim();
  const Mat A = closed_loop_jacobian(sys);
  Eigen::EigenSolver<Mat> es(A);
  const auto vals = es.eigenvalues();
  const auto vecs = es.eigenvectors();
  Mat P(n, n);
  std::vector<int> real_cols, complex_cols;
  int col = 0;
  for (int i = 0; i < n; ++i) {
    if (std::abs(vals[i].imag()) < 1e-10) {
      P.col(col) = vecs.col(i).real();
      real_cols.push_back(col++);
    } else if (vals[i].imag() > 0.0) {
      P.col(col) = vecs.col(i).real();
      P.col(col + 1) = vecs.col(i).imag();
      complex_cols.push_back(col);
      col += 2;
    }
  }
  if (col != n) return std::nullopt;
  const Mat Pi = P.inverse();

  const int w1 = widths[1];
  if (w1 % 2 != 0) return std::nullopt;
  const int pairs = w1 / 2;
  const int n_real = static_cast<int>(real_cols.size());
  const int n_cplx = static_cast<int>(complex_cols.size());
  int per_mode = 0;
  if (n_cplx > 0) {
    per_mode = (pairs - n_real) / n_cplx;
    if (per_mode < 2) return std::nullopt;
  } else if (pairs < n_real) {
    return std::nullopt;
  }
  std::vector<Vec> dirs;
  for (int c : real_cols) dirs.push_back(Pi.row(c).transpose().normalized());
  for (int c : complex_cols) {
    const Vec p = Pi.row(c).transpose(), q = Pi.row(c + 1).transpose();
    const double s = 1.0 / std::max(p.norm(), q.norm());
    for (int j = 0; j < per_mode; ++j) {
      const double phi = M_PI * j / per_mode;
      dirs.push_back(s * (std::cos(phi) * p + std::sin(phi) * q));
    }
  }
  const int main_pairs = static_cast<int>(dirs.size());

  DenseLayer first{Mat::Zero(w1, n), Vec::Zero(w1)};
  Vec out_w(w1);
  for (int k = 0; k < pairs; ++k) {
    const bool extra = k >= main_pairs;
    const Vec& d = dirs[static_cast<std::size_t>(extra ? (k - main_pairs) % main_pairs : k)];
    first.weights.row(2 * k) = d.transpose();
    first.weights.row(2 * k + 1) = -d.transpose();
    if (extra && !cfg.zero_bias) first.bias.segment(2 * k, 2).setConstant(-cfg.deadzone_offset);
    out_w.segment(2 * k, 2).setConstant(extra ? cfg.deadzone_weight : 1.0);
  }

  std::vector<DenseLayer> layers{first};
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t l = 2; l + 1 < widths.size(); ++l) {
    if (widths[l] != widths[l - 1]) return std::nullopt;
    Mat W = Mat::Identity(widths[l], widths[l]);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] += cfg.hidden_noise * unit(rng);
    layers.push_back({W, Vec::Zero(widths[l])});
  }
  layers.push_back({out_w.transpose(), Vec::Zero(1)});
  return PwaNetwork(std::move(layers));
}

PwaNetwork random_init(const std::vector<int>& widths, bool zero_bias, std::mt19937_64& rng) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 1; l < widths.size(); ++l) {
    std::normal_distribution<double> w(0.0, 1.0 / std::sqrt(static_cast<double>(widths[l - 1])));
    std::uniform_real_distribution<double> b(-0.1, 0.1);
    DenseLayer layer{Mat(widths[l], widths[l - 1]), Vec::Zero(widths[l])};
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = w(rng);
    if (!zero_bias && l + 1 < widths.size()) {
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = b(rng);
    }
    layers.push_back(std::move(layer));
  }
  // Positive output weights make a positive surrogate easier to reach.
  layers.back().weights = layers.back().weights.cwiseAbs();
  return PwaNetwork(std::move(layers));
}

void zero_at_origin(PwaNetwork& net) {
  const double v0 = net.forward(Vec::Zero(net.input_dim()));
  net.mutable_layers().back().bias[0] -= v0;
}

void require_settles(const SystemSpec& sys, const FixtureConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ 0x57ab1eULL);
  const Vec r = Vec::Zero(sys.reference_dim());
  for (int k = 0; k < cfg.stability_rollouts; ++k) {
    const Vec x0 = uniform_box(rng, sys.domain_lo, sys.domain_hi);
    Vec x = x0;
    for (int t = 0; t < 400; ++t) x = sys.closed_loop(x, r);
    if (!x.allFinite() || x.norm() > 0.05 * x0.norm()) {
      throw InputError("train_lyapunov_fixture: closed loop does not settle from sampled states");
    }
  }
}

}  // namespace

FixtureResult train_lyapunov_fixture(const SystemSpec& sys, const std::vector<int>& widths,
                                     const FixtureConfig& cfg) {
  const int n = sys.state_dim();
  if (widths.size() < 3 || widths.front() != n || widths.back() != 1) {
    throw InputError("train_lyapunov_fixture: widths must be {n, hidden..., 1}");
  }
  require_settles(sys, cfg);
  std::mt19937_64 rng(cfg.seed);

  LyapunovCheckOptions val;
  val.samples = cfg.validation_samples;
  val.seed = cfg.seed + 1000;

  std::optional<PwaNetwork> seeded;
  if (cfg.modal_seed) seeded = modal_seed(sys, widths, cfg, rng);
  PwaNetwork net = seeded ? *seeded : random_init(widths, cfg.zero_bias, rng);
  zero_at_origin(net);
  if (seeded) {
    LyapunovReport rep = check_lyapunov(net, sys, val);
    if (rep.ok()) return {net, rep, 0};
  }

  std::vector<Vec> bias_mask;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const bool last = l + 1 == net.layers().size();
    bias_mask.push_back(Vec::Constant(net.layers()[l].bias.size(), (cfg.zero_bias || last) ? 0.0 : 1.0));
  }
  if (cfg.zero_bias) {
    for (auto& layer : net.mutable_layers()) layer.bias.setZero();
  }

  Adam adam(net, cfg.lr);
  ParamGrad g = ParamGrad::zeros_like(net);
  const Vec r0 = Vec::Zero(sys.reference_dim());
  std::vector<Vec> hard;
  LyapunovReport last;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<Vec> batch;
    for (int i = 0; i < cfg.batch; ++i) batch.push_back(uniform_box(rng, sys.domain_lo, sys.domain_hi));
    if (!hard.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, hard.size() - 1);
      for (int i = 0; i < cfg.batch / 2; ++i) batch.push_back(hard[pick(rng)]);
    }
    g.set_zero();
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const Vec& y : batch) {
      const double size = y.lpNorm<Eigen::Infinity>();
      const double v = net.forward(y);
      if (cfg.positivity_margin * size - v > 0.0) backprop(net, y, -w, g);
      const Vec yn = sys.closed_loop(y, r0);
      if (net.forward(yn) - v + cfg.decrease_margin * size > 0.0) {
        backprop(net, yn, w, g);
        backprop(net, y, -w, g);
      }
    }
    adam.step(net, g, &bias_mask);
    zero_at_origin(net);

    if (epoch % cfg.check_every == 0 || epoch == cfg.max_epochs) {
      // Hard-negative mining on a fresh probe.
      hard.clear();
      for (int i = 0; i < 8 * cfg.batch; ++i) {
        const Vec y = uniform_box(rng, sys.domain_lo, sys.domain_hi);
        const double v = net.forward(y);
        const double size = y.lpNorm<Eigen::Infinity>();
        if (v < cfg.positivity_margin * size ||
            net.forward(sys.closed_loop(y, r0)) - v + cfg.decrease_margin * size > 0.0) {
          hard.push_back(y);
        }
      }
      if (hard.empty()) {
        last = check_lyapunov(net, sys, val);
        if (last.ok()) return {net, last, epoch};
      }
    }
  }
  last = check_lyapunov(net, sys, val);
  throw TrainingFailed("train_lyapunov_fixture: no valid network after " +
                           std::to_string(cfg.max_epochs) + " epochs (" +
                           std::to_string(last.violations()) + " violations)",
                       last);
}

}  // namespace nlcapi
