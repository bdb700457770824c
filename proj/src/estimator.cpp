#include "nlcapi/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "nlcapi/errors.hpp"
#include "nlcapi/io.hpp"

namespace nlcapi {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

PwaNetwork EstimatorNet::clamped() const {
  std::vector<DenseLayer> layers = net.layers();
  layers.push_back({Mat::Ones(1, 1), Vec::Zero(1)});
  return PwaNetwork(std::move(layers), net.activation());
}

VerifyResult verify_estimator(const PartitionTree& v_tree, const PwaNetwork& v_net,
                              const ReferenceMap& emap, const EstimatorNet& e_net,
                              const std::vector<PwaConstraint>& constraints, const Polytope& r_domain) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = v_net.input_dim();
  const int nr = emap.reference_dim();
  if (emap.state_dim() != n || e_net.net.input_dim() != nr || r_domain.dim() != nr) {
    throw InputError("verify_estimator: dimension mismatch");
  }
  if (!v_tree.annotated()) throw InputError("verify_estimator: Lyapunov tree must be annotated");
  for (const auto& c : constraints) c.validate(n);

  const PwaNetwork e_clamped = e_net.clamped();
  PartitionTree e_tree = build_partition_tree(e_clamped, r_domain);
  annotate_lower_bounds(e_tree, e_clamped);

  // Per-leaf boxes give a cheap upper bound on c for each triple.
  struct VLeaf { int node; Vec lo, hi; };
  struct ELeaf { int node; Vec lo, hi; };
  std::vector<VLeaf> vleaves;
  for (int idx : v_tree.leaves()) {
    auto [lo, hi] = bounding_box(v_tree.node(idx).region);
    vleaves.push_back({idx, lo, hi});
  }
  std::vector<ELeaf> eleaves;
  for (int idx : e_tree.leaves()) {
    auto [lo, hi] = bounding_box(e_tree.node(idx).region);
    eleaves.push_back({idx, lo, hi});
  }
  struct Piece { int k; const ConstraintPiece* cp; Vec CE; };
  std::vector<Piece> pieces;
  for (std::size_t k = 0; k < constraints.size(); ++k) {
    for (const auto& cp : constraints[k].pieces) {
      pieces.push_back({static_cast<int>(k), &cp, emap.E.transpose() * cp.piece.C});
    }
  }

  auto box_max = [](const Vec& a, const Vec& lo, const Vec& hi) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += a[i] > 0.0 ? a[i] * hi[i] : a[i] * lo[i];
    return s;
  };

  struct Triple { double bound; int v, e, p; };
  std::vector<Triple> triples;
  VerifyResult res;
  for (std::size_t v = 0; v < vleaves.size(); ++v) {
    const PartitionNode& vn = v_tree.node(vleaves[v].node);
    for (std::size_t e = 0; e < eleaves.size(); ++e) {
      const PartitionNode& en = e_tree.node(eleaves[e].node);
      for (std::size_t p = 0; p < pieces.size(); ++p) {
        ++res.triples;
        if (vn.v_lower > en.v_upper) {
          ++res.skipped_level;
          continue;
        }
        const auto& pc = pieces[p];
        const double bound = box_max(pc.cp->piece.C, vleaves[v].lo, vleaves[v].hi) +
                             box_max(pc.CE, eleaves[e].lo, eleaves[e].hi) + pc.cp->piece.d;
        triples.push_back({bound, static_cast<int>(v), static_cast<int>(e), static_cast<int>(p)});
      }
    }
  }
  std::stable_sort(triples.begin(), triples.end(), [](const Triple& a, const Triple& b) { return a.bound > b.bound; });

  const int dim = n + nr;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < triples.size(); ++t) {
    const Triple& tr = triples[t];
    if (tr.bound <= best) {
      res.skipped_bound += static_cast<long>(triples.size() - t);
      break;
    }
    const PartitionNode& vn = v_tree.node(vleaves[tr.v].node);
    const PartitionNode& en = e_tree.node(eleaves[tr.e].node);
    const Piece& pc = pieces[tr.p];
    LpProblem lp(dim);
    lp.reserve(static_cast<int>(vn.region.halfspaces().size() + en.region.halfspaces().size() +
                                pc.cp->region.halfspaces().size() + 1));
    for (const auto& h : vn.region.halfspaces()) {
      double* row = lp.add_le(h.offset);
      for (int i = 0; i < n; ++i) row[i] = h.normal[i];
      const Vec back = -emap.E.transpose() * h.normal;
      for (int j = 0; j < nr; ++j) row[n + j] = back[j];
    }
    for (const auto& h : en.region.halfspaces()) {
      double* row = lp.add_le(h.offset);
      for (int j = 0; j < nr; ++j) row[n + j] = h.normal[j];
    }
    for (const auto& h : pc.cp->region.halfspaces()) {
      double* row = lp.add_le(h.offset);
      for (int i = 0; i < n; ++i) row[i] = h.normal[i];
    }
    {
      double* row = lp.add_le(en.piece.d - vn.piece.d);
      for (int i = 0; i < n; ++i) row[i] = vn.piece.C[i];
      const Vec back = -emap.E.transpose() * vn.piece.C - en.piece.C;
      for (int j = 0; j < nr; ++j) row[n + j] = back[j];
    }
    Vec obj = Vec::Zero(dim);
    obj.head(n) = -pc.cp->piece.C;
    LpResult r;
    try {
      r = solve(lp, std::span<const double>(obj.data(), dim));
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("verify LP (V leaf " + std::to_string(vn.layer) + "/" +
                             std::to_string(vleaves[tr.v].node) + ", E leaf " +
                             std::to_string(eleaves[tr.e].node) + ", " + constraints[pc.k].name +
                             "): " + e.what());
    }
    ++res.lps_solved;
    if (!r.optimal()) {
      ++res.infeasible;
      continue;
    }
    const double val = -r.value + pc.cp->piece.d;
    if (val > best) {
      best = val;
      res.witness_x = r.point.head(n);
      res.witness_r = r.point.tail(nr);
    }
  }
  res.opt_value = best;
  res.verified = best <= 0.0;
  res.seconds = seconds_since(t0);
  return res;
}

std::vector<TrainingSample> pretrain_dataset(const LevelOracle& q, const Polytope& r_domain, int n,
                                             std::uint64_t seed) {
  if (n < 1) throw InputError("pretrain_dataset: n must be positive");
  if (is_empty(r_domain)) throw InputError("pretrain_dataset: reference domain is empty");
  auto [lo, hi] = bounding_box(r_domain);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrainingSample> out;
  long attempts = 0;
  while (static_cast<int>(out.size()) < n) {
    if (++attempts > 1000L * n) throw InputError("pretrain_dataset: rejection sampling made no progress");
    Vec r(lo.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
    if (!r_domain.contains(r)) continue;
    const double g = q(r);
    if (!std::isfinite(g)) throw InputError("pretrain_dataset: oracle returned a non-finite level");
    out.push_back({r, g, false});
  }
  return out;
}

double mse_loss(const PwaNetwork& net, const std::vector<Vec>& inputs, const std::vector<double>& targets,
                ParamGrad* grad) {
  if (inputs.size() != targets.size() || inputs.empty()) throw InputError("mse_loss: bad dataset");
  const double w = 1.0 / static_cast<double>(inputs.size());
  double loss = 0.0;
  if (grad) grad->set_zero();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double y = net.forward(inputs[i]);
    if (grad) backprop(net, inputs[i], 2.0 * (y - targets[i]) * w, *grad);
    loss += w * (y - targets[i]) * (y - targets[i]);
  }
  return loss;
}

namespace {

struct Normalizer {
  Vec center, half;
  double scale = 1.0;

  Vec in(const Vec& r) const { return (r - center).cwiseQuotient(half); }

  PwaNetwork fold(const PwaNetwork& u) const {
    std::vector<DenseLayer> layers = u.layers();
    DenseLayer& first = layers.front();
    first.bias -= first.weights * center.cwiseQuotient(half);
    first.weights = first.weights * half.cwiseInverse().asDiagonal();
    layers.back().weights *= scale;
    layers.back().bias *= scale;
    return PwaNetwork(std::move(layers), u.activation());
  }
};

std::string dataset_hash(const std::vector<TrainingSample>& data) {
  std::string bytes;
  char buf[64];
  for (const auto& s : data) {
    for (Eigen::Index i = 0; i < s.r.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g,", s.r[i]);
      bytes += buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g;", s.gamma);
    bytes += buf;
  }
  return hex64(fnv1a64(bytes));
}

}  // namespace

EstimatorNet train_estimator(const LevelOracle& q, const PartitionTree& v_tree, const PwaNetwork& v_net,
                             const ReferenceMap& emap, const std::vector<PwaConstraint>& constraints,
                             const Polytope& r_domain, const EstimatorConfig& cfg, TrainLog* log) {
  const auto t0 = std::chrono::steady_clock::now();
  const int nr = emap.reference_dim();
  if (cfg.max_iters < 1 || cfg.lr <= 0.0 || cfg.margin < 0.0 || cfg.margin >= 1.0) {
    throw InputError("train_estimator: invalid configuration");
  }
  std::vector<TrainingSample> data = pretrain_dataset(q, r_domain, cfg.n_pretrain, cfg.seed);

  auto [lo, hi] = bounding_box(r_domain);
  Normalizer norm;
  norm.center = (lo + hi) / 2.0;
  norm.half = ((hi - lo) / 2.0).cwiseMax(1e-12);
  double gmax = 0.0;
  for (const auto& s : data) gmax = std::max(gmax, s.gamma);
  norm.scale = gmax > 0.0 ? gmax : 1.0;

  std::mt19937_64 rng(cfg.seed ^ 0xe57ULL);
  std::vector<int> widths{nr};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 1; l < widths.size(); ++l) {
    std::normal_distribution<double> w(0.0, std::sqrt(2.0 / widths[l - 1]));
    DenseLayer layer{Mat(widths[l], widths[l - 1]), Vec::Constant(widths[l], 0.01)};
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = cfg.init_scale * w(rng);
    layers.push_back(std::move(layer));
  }
  layers.back().bias[0] = cfg.init_bias / norm.scale;
  PwaNetwork u(std::move(layers));

  std::vector<Vec> inputs;
  std::vector<double> targets;
  auto add_sample = [&](const TrainingSample& s) {
    inputs.push_back(norm.in(s.r));
    targets.push_back(s.gamma * (1.0 - cfg.margin) / norm.scale);
  };
  for (const auto& s : data) add_sample(s);

  ParamGrad g = ParamGrad::zeros_like(u);
  auto descend = [&](int steps) {
    for (int s = 0; s < steps; ++s) {
      mse_loss(u, inputs, targets, &g);
      gradient_step(u, g, cfg.lr);
    }
  };
  descend(cfg.pretrain_steps);

  EstimatorNet est;
  VerifyResult last;
  std::uniform_real_distribution<double> jit(-cfg.jitter, cfg.jitter);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    est.net = norm.fold(u);
    last = verify_estimator(v_tree, v_net, emap, est, constraints, r_domain);
    if (log) log->verifications.push_back(last);
    if (last.verified) {
      est.verified = true;
      est.iterations = it;
      est.dataset_size = static_cast<long>(data.size());
      est.dataset_hash = dataset_hash(data);
      if (log) {
        log->dataset = data;
        log->seconds = seconds_since(t0);
      }
      return est;
    }
    std::vector<Vec> cluster{last.witness_r};
    for (int k = 0; k < cfg.neighbors; ++k) {
      Vec r = last.witness_r;
      for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = std::clamp(r[i] + jit(rng), lo[i], hi[i]);
      if (r_domain.contains(r)) cluster.push_back(r);
    }
    for (const Vec& r : cluster) {
      TrainingSample s{r, q(r), true};
      data.push_back(s);
      add_sample(s);
    }
    descend(cfg.steps_per_iter);
  }
  if (log) {
    log->dataset = data;
    log->seconds = seconds_since(t0);
  }
  throw Unverified("train_estimator: not verified after " + std::to_string(cfg.max_iters) +
                       " iterations (max violation " + std::to_string(last.opt_value) + ")",
                   last);
}

}  // namespace nlcapi
