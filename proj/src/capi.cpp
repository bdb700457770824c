#include "nlcapi/capi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include "nlcapi/errors.hpp"

namespace nlcapi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kZeroNormal = 1e-12;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Face of a constraint region where the piece vanishes, clipped to the shifted domain.
// Returns nullopt when the face is empty for sure (constant nonzero piece).
std::optional<Polytope> boundary_face(const Polytope& region, const AffinePiece& piece,
                                      const Polytope& shifted_domain) {
  Polytope face = region;
  for (const auto& h : shifted_domain.halfspaces()) face.add(h);
  if (piece.C.norm() <= kZeroNormal) {
    if (std::abs(piece.d) > kZeroNormal) return std::nullopt;
    return face;
  }
  face.add(Hyperplane{piece.C, -piece.d});
  return face;
}

// Min of p.y + d over {lo <= y <= hi, C.y = beta}; +inf when the plane misses the box.
// One equality row over a box is a continuous knapsack, solved greedily.
double box_plane_min(const AffinePiece& v, const Vec& lo, const Vec& hi, const Vec& C, double beta) {
  const int n = static_cast<int>(lo.size());
  Vec y(n);
  for (int j = 0; j < n; ++j) y[j] = v.C[j] > 0.0 ? lo[j] : hi[j];
  double value = v.C.dot(y) + v.d;
  double need = beta - C.dot(y);
  const double sigma = need >= 0.0 ? 1.0 : -1.0;
  need = std::abs(need);
  if (need == 0.0) return value;

  struct Move {
    double ratio, gain, cost;
  };
  std::vector<Move> moves;
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    if (C[j] == 0.0) continue;
    const double target = sigma * C[j] > 0.0 ? hi[j] : lo[j];
    const double gain = sigma * C[j] * (target - y[j]);
    if (gain <= 0.0) continue;
    const double cost = v.C[j] * (target - y[j]);
    moves.push_back({cost / gain, gain, cost});
    total += gain;
  }
  if (total < need - 1e-9 * (1.0 + std::abs(beta))) return kInf;
  std::sort(moves.begin(), moves.end(), [](const Move& a, const Move& b) { return a.ratio < b.ratio; });
  for (const Move& m : moves) {
    if (need <= 0.0) break;
    const double take = std::min(1.0, need / m.gain);
    value += take * m.cost;
    need -= take * m.gain;
  }
  return value;
}

}  // namespace

double PwaConstraint::operator()(const Vec& x) const {
  const ConstraintPiece* best = nullptr;
  double best_slack = -kInf;
  for (const auto& p : pieces) {
    const double s = p.region.min_slack(x);
    if (s > best_slack) {
      best_slack = s;
      best = &p;
    }
  }
  if (best == nullptr || best_slack < -kFeasTol) {
    throw NotInDomain("constraint '" + name + "': no piece contains the point");
  }
  return best->piece(x);
}

void PwaConstraint::validate(int n) const {
  if (pieces.empty()) throw InputError("constraint '" + name + "' has no pieces");
  for (const auto& p : pieces) {
    if (p.region.dim() != n || p.piece.C.size() != n) {
      throw InputError("constraint '" + name + "': piece dimension does not match the state");
    }
    if (!p.piece.C.allFinite() || !std::isfinite(p.piece.d)) {
      throw InputError("constraint '" + name + "': non-finite coefficients");
    }
  }
}

std::vector<PwaConstraint> box_constraints(const std::vector<std::optional<double>>& lower,
                                           const std::vector<std::optional<double>>& upper) {
  if (lower.size() != upper.size()) throw InputError("box_constraints: bound vectors differ in length");
  const int n = static_cast<int>(lower.size());
  std::vector<PwaConstraint> out;
  for (int i = 0; i < n; ++i) {
    if (lower[i] && upper[i] && !(*lower[i] < *upper[i])) {
      throw InputError("box_constraints: lower bound not below upper bound for coordinate " +
                       std::to_string(i));
    }
    if (upper[i]) {
      AffinePiece c{Vec::Zero(n), -*upper[i]};
      c.C[i] = 1.0;
      out.push_back({"x" + std::to_string(i) + "_max", {{Polytope(n), c}}});
    }
    if (lower[i]) {
      AffinePiece c{Vec::Zero(n), *lower[i]};
      c.C[i] = -1.0;
      out.push_back({"x" + std::to_string(i) + "_min", {{Polytope(n), c}}});
    }
  }
  return out;
}

PwaConstraint polytope_constraint(const Mat& A, const Vec& b, std::string name) {
  if (A.rows() != b.size() || A.rows() == 0) throw InputError("polytope_constraint: bad shapes");
  const int n = static_cast<int>(A.cols());
  PwaConstraint c{std::move(name), {}};
  for (int k = 0; k < A.rows(); ++k) {
    Polytope region(n);
    bool never_max = false;
    // A_j x - b_j <= A_k x - b_k
    for (int j = 0; j < A.rows(); ++j) {
      if (j == k) continue;
      const Vec normal = (A.row(j) - A.row(k)).transpose();
      if (normal.norm() <= kZeroNormal) {
        never_max |= b[k] > b[j];
        continue;
      }
      region.add(Halfspace{normal, b[j] - b[k]});
    }
    if (!never_max) c.pieces.push_back({std::move(region), AffinePiece{A.row(k).transpose(), -b[k]}});
  }
  return c;
}

InactiveSet find_inactive_hyperplanes(const std::vector<std::optional<Hyperplane>>& planes,
                                      const Polytope& pc, double tol) {
  if (planes.size() > 64) throw InputError("find_inactive_hyperplanes: first layer wider than 64");
  InactiveSet s;
  for (std::size_t j = 0; j < planes.size(); ++j) {
    if (!planes[j]) continue;
    const Side side = hyperplane_cuts(pc, *planes[j], tol);
    if (side == Side::Cuts) continue;
    const std::uint8_t bit = side == Side::Above ? 0 : 1;
    s.pairs.emplace_back(static_cast<int>(j), bit);
    s.care |= std::uint64_t{1} << j;
    if (bit) s.forbidden |= std::uint64_t{1} << j;
  }
  return s;
}

LpResult pair_lp(const AffinePiece& piece_v, const Polytope& region_v, const AffinePiece& piece_c,
                 const Polytope& region_c, const Vec& shift, std::uint64_t seed) {
  const int n = region_v.dim();
  if (region_c.dim() != n || piece_v.C.size() != n || piece_c.C.size() != n || shift.size() != n) {
    throw InputError("pair_lp: dimension mismatch");
  }
  LpProblem lp(n);
  lp.reserve(static_cast<int>(region_v.halfspaces().size() + region_c.halfspaces().size()));
  lp.add_translated(region_v, shift);
  lp.add(region_c);
  if (piece_c.C.norm() <= kZeroNormal) {
    if (std::abs(piece_c.d) > kZeroNormal) return LpResult{};
  } else {
    lp.add_eq(piece_c.C, -piece_c.d);
  }
  LpResult res = solve(lp, std::span<const double>(piece_v.C.data(), n), seed);
  if (res.optimal()) res.value += piece_v.d - piece_v.C.dot(shift);
  return res;
}

// ------------------------------------------------------------------ LevelSolver

LevelSolver::LevelSolver(const PartitionTree& tree, const PwaNetwork& net, ReferenceMap emap,
                         std::vector<PwaConstraint> constraints)
    : tree_(&tree),
      emap_(std::move(emap)),
      constraints_(std::move(constraints)),
      whole_space_(net.input_dim()) {
  if (tree.empty()) throw InputError("max_admissible_level: empty partition tree");
  const int n = net.input_dim();
  if (tree.domain().dim() != n || emap_.state_dim() != n) {
    throw InputError("max_admissible_level: tree, network and reference map disagree on dimension");
  }
  for (const auto& c : constraints_) c.validate(n);

  for (const auto& c : constraints_) {
    std::vector<char> act;
    for (const auto& p : c.pieces) {
      const LpResult r = solve_lp(-p.piece.C, p.region);
      act.push_back(r.status == LpStatus::Unbounded || (r.optimal() && -r.value + p.piece.d > 0.0));
    }
    active_.push_back(std::move(act));
  }

  if (net.hidden_layers() > 0) {
    if (net.width(0) > 64) throw InputError("max_admissible_level: first layer wider than 64");
    for (int j = 0; j < net.width(0); ++j) first_planes_.push_back(net.neuron_hyperplane({}, 0, j));
  }
  const auto& nodes = tree.nodes();
  leaf_mask_.assign(nodes.size(), 0);
  subtree_leaves_.assign(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf() && !nodes[i].pattern.bits.empty()) leaf_mask_[i] = nodes[i].pattern.first_layer_mask();
  }
  box_lo_.assign(nodes.size(), Vec());
  box_hi_.assign(nodes.size(), Vec());
  for (int i : tree.leaves()) {
    // Widened so round-off in the box LPs cannot cut off part of the leaf.
    auto [lo, hi] = bounding_box(nodes[i].region);
    box_lo_[i] = lo.array() - 1e-9;
    box_hi_[i] = hi.array() + 1e-9;
  }
  for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
    if (nodes[i].is_leaf()) {
      subtree_leaves_[i] = 1;
    } else {
      for (int c : nodes[i].children) subtree_leaves_[i] += subtree_leaves_[c];
    }
  }
}

LevelResult LevelSolver::traverse(const std::vector<Target>& targets,
                                  const std::vector<std::string>& names, const Vec& shift,
                                  const LevelOptions& opts) const {
  const auto t0 = std::chrono::steady_clock::now();
  LevelResult res;
  if (opts.use_ps2 && !tree_->annotated()) {
    throw InputError("max_admissible_level: PS2 needs an annotated tree");
  }

  // PS1 data is reference dependent: the face lives in the shifted domain.
  std::vector<InactiveSet> inactive(targets.size());
  std::vector<char> face_empty(targets.size(), 0);
  if (opts.use_ps1) {
    const Polytope shifted = tree_->domain().translated(shift);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto face = boundary_face(*targets[t].region, targets[t].piece, shifted);
      ++res.counters.aux_lps;
      if (!face || is_empty(*face)) {
        face_empty[t] = 1;
        continue;
      }
      // Leaf patterns refer to the tree's coordinates y = x - shift.
      inactive[t] = find_inactive_hyperplanes(first_planes_, face->translated(-shift), opts.ps1_tol);
      for (const auto& p : first_planes_) res.counters.aux_lps += p ? 2 : 0;
    }
  }

  double best = kInf;
  int best_owner = -1;
  auto solve_pair = [&](int idx, std::size_t t) {
    const PartitionNode& node = tree_->node(idx);
    const Target& tg = targets[t];
    LpResult lp;
    try {
      lp = pair_lp(node.piece, node.region, tg.piece, *tg.region, shift);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("pair LP (leaf " + std::to_string(idx) + ", " + names[tg.owner] +
                             "): " + e.what());
    }
    ++res.counters.lps_solved;
    if (!lp.optimal()) {
      ++res.counters.infeasible;
      return;
    }
    if (lp.value < best || (lp.value == best && tg.owner < best_owner)) {
      best = lp.value;
      best_owner = tg.owner;
      res.argmin = lp.point;
    }
  };
  auto skip_ps1 = [&](int idx, std::size_t t) {
    return opts.use_ps1 && (face_empty[t] || inactive[t].matches(leaf_mask_[idx]));
  };

  if (opts.use_box_bound) {
    struct Pair {
      double bound;
      int leaf;
      std::size_t target;
    };
    std::vector<Pair> pairs;
    for (int idx : tree_->leaves()) {
      const PartitionNode& node = tree_->node(idx);
      for (std::size_t t = 0; t < targets.size(); ++t) {
        if (skip_ps1(idx, t)) {
          ++res.counters.pruned_ps1;
          continue;
        }
        // c(y + shift) = 0 in tree coordinates.
        const AffinePiece& c = targets[t].piece;
        const double beta = -c.d - c.C.dot(shift);
        double bound = c.C.norm() <= kZeroNormal
                           ? (std::abs(c.d) > kZeroNormal ? kInf : -kInf)
                           : box_plane_min(node.piece, box_lo_[idx], box_hi_[idx], c.C, beta);
        if (tree_->annotated()) bound = std::max(bound, node.v_lower);
        if (bound == kInf) {
          ++res.counters.pruned_box;
          continue;
        }
        pairs.push_back({bound, idx, t});
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      return a.bound < b.bound || (a.bound == b.bound && a.leaf < b.leaf) ||
             (a.bound == b.bound && a.leaf == b.leaf && a.target < b.target);
    });
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].bound > best) {
        res.counters.pruned_box += static_cast<long>(pairs.size() - i);
        break;
      }
      if (opts.use_ps2 && tree_->node(pairs[i].leaf).v_lower > best) {
        ++res.counters.pruned_ps2;
        continue;
      }
      solve_pair(pairs[i].leaf, pairs[i].target);
    }
  } else {
    const long n_targets = static_cast<long>(targets.size());
    std::deque<int> work{0};
    while (!work.empty()) {
      const int idx = work.front();
      work.pop_front();
      const PartitionNode& node = tree_->node(idx);
      if (opts.use_ps2 && node.v_lower > best) {
        res.counters.pruned_ps2 += subtree_leaves_[idx] * n_targets;
        continue;
      }
      if (!node.is_leaf()) {
        std::vector<int> kids = node.children;
        if (tree_->annotated()) {
          std::stable_sort(kids.begin(), kids.end(), [&](int a, int b) {
            return tree_->node(a).v_lower < tree_->node(b).v_lower;
          });
        }
        work.insert(work.end(), kids.begin(), kids.end());
        continue;
      }
      for (std::size_t t = 0; t < targets.size(); ++t) {
        if (skip_ps1(idx, t)) {
          ++res.counters.pruned_ps1;
          continue;
        }
        solve_pair(idx, t);
      }
    }
  }

  if (best_owner < 0) {
    res.unbounded = true;
    res.gamma_star = kInf;
  } else {
    // LP round-off can leave a value a hair below a true minimum of zero.
    res.gamma_star = best < 0.0 && best > -kFeasTol ? 0.0 : best;
    res.binding = names[best_owner];
  }
  res.seconds = seconds_since(t0);
  return res;
}

LevelResult LevelSolver::solve(const Vec& r, const LevelOptions& opts) const {
  const auto t0 = std::chrono::steady_clock::now();
  if (r.size() != emap_.reference_dim()) throw InputError("max_admissible_level: reference dimension mismatch");
  const Vec xr = emap_.equilibrium(r);

  std::vector<std::string> names;
  int on_boundary = -1;
  for (std::size_t k = 0; k < constraints_.size(); ++k) {
    names.push_back(constraints_[k].name);
    const double v = constraints_[k](xr);
    if (v > opts.boundary_tol) {
      throw InfeasibleReference("reference equilibrium violates constraint '" + constraints_[k].name + "'");
    }
    if (on_boundary < 0 && std::abs(v) <= opts.boundary_tol) on_boundary = static_cast<int>(k);
  }
  if (on_boundary >= 0) {
    LevelResult res;
    res.gamma_star = 0.0;
    res.argmin = xr;
    res.binding = names[on_boundary];
    res.seconds = seconds_since(t0);
    return res;
  }

  std::vector<Target> targets;
  for (std::size_t k = 0; k < constraints_.size(); ++k) {
    for (std::size_t p = 0; p < constraints_[k].pieces.size(); ++p) {
      if (!active_[k][p]) continue;
      targets.push_back({static_cast<int>(k), &constraints_[k].pieces[p].region, constraints_[k].pieces[p].piece});
    }
  }
  add_domain_targets(xr, opts, targets, names);
  LevelResult res = traverse(targets, names, xr, opts);
  res.seconds = seconds_since(t0);
  return res;
}

void LevelSolver::add_domain_targets(const Vec& shift, const LevelOptions& opts,
                                     std::vector<Target>& targets,
                                     std::vector<std::string>& names) const {
  if (!opts.cap_to_domain) return;
  const int owner = static_cast<int>(names.size());
  names.push_back("domain");
  for (const auto& h : tree_->domain().halfspaces()) {
    targets.push_back({owner, &whole_space_, AffinePiece{h.normal, -h.offset - h.normal.dot(shift)}});
  }
}

LevelResult LevelSolver::solve_convex(const Mat& A, const Vec& b, const Vec& r, int facet,
                                      const LevelOptions& opts) const {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = tree_->domain().dim();
  if (A.cols() != n || A.rows() != b.size() || A.rows() == 0) {
    throw InputError("max_admissible_level_convex: A and b have inconsistent shapes");
  }
  if (facet >= A.rows()) throw InputError("max_admissible_level_convex: facet index out of range");
  const Vec xr = emap_.equilibrium(r);
  const Vec slack = A * xr - b;

  std::vector<std::string> names;
  for (int k = 0; k < A.rows(); ++k) names.push_back("facet_" + std::to_string(k));
  if (slack.maxCoeff() > opts.boundary_tol) {
    throw InfeasibleReference("reference equilibrium lies outside the admissible polytope");
  }
  for (int k = 0; k < A.rows(); ++k) {
    if ((facet < 0 || facet == k) && std::abs(slack[k]) <= opts.boundary_tol) {
      LevelResult res;
      res.argmin = xr;
      res.binding = names[k];
      res.seconds = seconds_since(t0);
      return res;
    }
  }

  Polytope K(n);
  for (int k = 0; k < A.rows(); ++k) K.add(Halfspace{A.row(k).transpose(), b[k]});
  std::vector<Target> targets;
  for (int k = 0; k < A.rows(); ++k) {
    if (facet >= 0 && k != facet) continue;
    targets.push_back({k, &K, AffinePiece{A.row(k).transpose(), -b[k]}});
  }
  add_domain_targets(xr, opts, targets, names);
  LevelResult res = traverse(targets, names, xr, opts);
  res.seconds = seconds_since(t0);
  return res;
}

LevelResult max_admissible_level(const PartitionTree& tree, const PwaNetwork& net,
                                 const std::vector<PwaConstraint>& constraints, const Vec& r,
                                 const ReferenceMap& emap, const LevelOptions& opts) {
  return LevelSolver(tree, net, emap, constraints).solve(r, opts);
}

LevelResult max_admissible_level_convex(const PartitionTree& tree, const PwaNetwork& net,
                                        const Mat& A, const Vec& b, int facet, const Vec& r,
                                        const ReferenceMap& emap, const LevelOptions& opts) {
  return LevelSolver(tree, net, emap, {}).solve_convex(A, b, r, facet, opts);
}

// ------------------------------------------------------------------ grid oracle

namespace {

// Zero of c on the segment [a, b] given c(a), c(b) of opposite sign.
Vec edge_crossing(const PwaConstraint& c, Vec a, Vec b, double ca, double cb) {
  Vec x = a + (ca / (ca - cb)) * (b - a);
  double cx = c(x);
  // Interpolation is exact unless a kink of c lies on the edge.
  for (int it = 0; it < 80 && std::abs(cx) > 1e-13; ++it) {
    if ((cx > 0) == (ca > 0)) {
      a = x;
      ca = cx;
    } else {
      b = x;
      cb = cx;
    }
    x = 0.5 * (a + b);
    cx = c(x);
  }
  return x;
}

}  // namespace

double grid_oracle_gamma(const PwaNetwork& net, const ReferenceMap& emap,
                         const std::vector<PwaConstraint>& constraints, const Vec& r,
                         const Vec& domain_lo, const Vec& domain_hi, int resolution,
                         int segment_samples) {
  const int n = net.input_dim();
  if (domain_lo.size() != n || domain_hi.size() != n) throw InputError("grid_oracle_gamma: domain dimension mismatch");
  if (resolution < 2) throw InputError("grid_oracle_gamma: resolution must be at least 2");
  if (std::pow(static_cast<double>(resolution), n) > 1e8) {
    throw InputError("grid_oracle_gamma: resolution^n exceeds 1e8 grid points");
  }
  const Vec shift = emap.equilibrium(r);
  const Vec lo = domain_lo + shift;
  const Vec step = (domain_hi - domain_lo) / (resolution - 1);

  std::vector<long> stride(n);
  long total = 1;
  for (int i = 0; i < n; ++i) {
    stride[i] = total;
    total *= resolution;
  }
  auto point = [&](long id) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = lo[i] + step[i] * static_cast<double>((id / stride[i]) % resolution);
    return x;
  };
  auto value = [&](const Vec& x) { return net.forward(x - shift); };

  double best = kInf;
  std::vector<double> cv(total);
  for (const auto& c : constraints) {
    for (long id = 0; id < total; ++id) cv[id] = c(point(id));
    // Crossing point per (grid point, axis) edge, if any.
    std::vector<std::vector<Vec>> crossing(n, std::vector<Vec>());
    std::vector<std::vector<char>> has(n, std::vector<char>(n == 2 ? total : 0, 0));
    if (n == 2) {
      crossing[0].resize(total);
      crossing[1].resize(total);
    }
    for (long id = 0; id < total; ++id) {
      if (cv[id] == 0.0) best = std::min(best, value(point(id)));
      for (int ax = 0; ax < n; ++ax) {
        if ((id / stride[ax]) % resolution == resolution - 1) continue;
        const long nb = id + stride[ax];
        const double ca = cv[id], cb = cv[nb];
        if (!((ca < 0 && cb > 0) || (ca > 0 && cb < 0))) continue;
        const Vec x = edge_crossing(c, point(id), point(nb), ca, cb);
        best = std::min(best, value(x));
        if (n == 2) {
          crossing[ax][id] = x;
          has[ax][id] = 1;
        }
      }
    }
    if (n != 2 || segment_samples <= 0) continue;
    // Sample the zero segment through each straddling cell.
    for (long id = 0; id < total; ++id) {
      if ((id / stride[0]) % resolution == resolution - 1) continue;
      if ((id / stride[1]) % resolution == resolution - 1) continue;
      std::vector<Vec> pts;
      if (has[0][id]) pts.push_back(crossing[0][id]);
      if (has[1][id]) pts.push_back(crossing[1][id]);
      if (has[0][id + stride[1]]) pts.push_back(crossing[0][id + stride[1]]);
      if (has[1][id + stride[0]]) pts.push_back(crossing[1][id + stride[0]]);
      for (std::size_t a = 0; a < pts.size(); ++a) {
        for (std::size_t b = a + 1; b < pts.size(); ++b) {
          for (int s = 1; s <= segment_samples; ++s) {
            const Vec x = pts[a] + (static_cast<double>(s) / (segment_samples + 1)) * (pts[b] - pts[a]);
            // Only points that really sit on the zero set count.
            if (std::abs(c(x)) <= 1e-10) best = std::min(best, value(x));
          }
        }
      }
    }
  }
  return best;
}

}  // namespace nlcapi
