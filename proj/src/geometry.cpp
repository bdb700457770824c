#include "nlcapi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "nlcapi/errors.hpp"

namespace nlcapi {

namespace {

constexpr double kBox = 1e6;          // artificial bound used to detect unboundedness
constexpr double kZeroNorm = 1e-12;   // rows with smaller norm are constant
constexpr double kCheckTol = 1e-6;    // post-solve residual allowed before NumericalFailure

void check_dim(const Vec& v, int dim, const char* what) {
  if (v.size() != dim) {
    throw InputError(std::string(what) + ": expected dimension " + std::to_string(dim) +
                     ", got " + std::to_string(v.size()));
  }
}

// Dense rows [a_0 .. a_{d-1}, b, t] for a . x <= b, normalized to unit ||a||.
// t bounds the accumulated error in b and is the row's feasibility tolerance.
class RowSet {
 public:
  explicit RowSet(int d) : d_(d) {}
  int size() const { return static_cast<int>(data_.size() / (d_ + 2)); }
  const double* row(int i) const { return data_.data() + static_cast<std::size_t>(i) * (d_ + 2); }
  double* push() {
    data_.resize(data_.size() + d_ + 2, 0.0);
    return data_.data() + data_.size() - (d_ + 2);
  }
  void pop() { data_.resize(data_.size() - (d_ + 2)); }
  void reserve(int n) { data_.reserve(static_cast<std::size_t>(n) * (d_ + 2)); }

 private:
  int d_;
  std::vector<double> data_;
};

// Normalizes a freshly pushed row. Returns 0 if it is fine, +1 if it is a
// trivially satisfied constant row (caller pops it), -1 if it is an
// unsatisfiable constant row.
int normalize_row(double* r, int d) {
  double nrm = 0.0;
  for (int j = 0; j < d; ++j) nrm += r[j] * r[j];
  nrm = std::sqrt(nrm);
  if (nrm < kZeroNorm) return r[d] < -r[d + 1] ? -1 : 1;
  for (int j = 0; j <= d + 1; ++j) r[j] /= nrm;
  return 0;
}

class Seidel {
 public:
  explicit Seidel(std::uint64_t seed) : rng_(seed) {}

  // Minimizes c.x over rows within the box [-kBox, kBox]^d. Returns false if infeasible.
  bool run(int d, const double* c, const RowSet& rows, double* x) {
    const int m = rows.size();
    if (d == 1) return solve_1d(c[0], rows, x);

    for (int j = 0; j < d; ++j) x[j] = c[j] > 0 ? -kBox : (c[j] < 0 ? kBox : 0.0);

    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);

    std::vector<double> sub_c(d - 1), sub_x(d - 1);
    for (int i = 0; i < m; ++i) {
      const double* h = rows.row(order[i]);
      double lhs = 0.0;
      for (int j = 0; j < d; ++j) lhs += h[j] * x[j];
      if (lhs <= h[d] + h[d + 1]) continue;

      // Optimum now lies on h: eliminate the coordinate with the largest coefficient.
      int k = 0;
      for (int j = 1; j < d; ++j) {
        if (std::abs(h[j]) > std::abs(h[k])) k = j;
      }
      const double hk = h[k];
      for (int j = 0, s = 0; j < d; ++j) {
        if (j == k) continue;
        sub_c[s++] = c[j] - c[k] * h[j] / hk;
      }

      RowSet sub(d - 1);
      sub.reserve(i + 2);
      auto project = [&](const double* q) -> bool {
        double* r = sub.push();
        const double qk = q[k];
        for (int j = 0, s = 0; j < d; ++j) {
          if (j == k) continue;
          r[s++] = q[j] - qk * h[j] / hk;
        }
        const double f = qk / hk;
        r[d - 1] = q[d] - f * h[d];
        r[d] = q[d + 1] + std::abs(f) * h[d + 1] +
               4.0 * std::numeric_limits<double>::epsilon() * (std::abs(q[d]) + std::abs(f * h[d]));
        const int st = normalize_row(r, d - 1);
        if (st == 1) sub.pop();
        return st != -1;
      };
      for (int p = 0; p < i; ++p) {
        if (!project(rows.row(order[p]))) return false;
      }
      // The eliminated coordinate keeps its box as two general rows.
      std::vector<double> bound(d + 2, 0.0);
      bound[k] = 1.0;
      bound[d] = kBox;
      bound[d + 1] = kFeasTol;
      if (!project(bound.data())) return false;
      bound[k] = -1.0;
      if (!project(bound.data())) return false;

      if (!run(d - 1, sub_c.data(), sub, sub_x.data())) return false;

      double rest = h[d];
      for (int j = 0, s = 0; j < d; ++j) {
        if (j == k) continue;
        x[j] = sub_x[s++];
        rest -= h[j] * x[j];
      }
      x[k] = rest / hk;
    }
    return true;
  }

 private:
  static bool solve_1d(double c, const RowSet& rows, double* x) {
    double lo = -kBox, hi = kBox, lo_tol = kFeasTol, hi_tol = kFeasTol;
    for (int i = 0; i < rows.size(); ++i) {
      const double* r = rows.row(i);
      if (std::abs(r[0]) < kZeroNorm) {
        if (r[1] < -r[2]) return false;
        continue;
      }
      const double v = r[1] / r[0];
      const double t = r[2] / std::abs(r[0]);
      if (r[0] > 0) {
        if (v < hi) hi = v, hi_tol = t;
      } else {
        if (v > lo) lo = v, lo_tol = t;
      }
    }
    if (lo > hi + std::max(lo_tol, hi_tol)) return false;
    if (lo > hi) {
      x[0] = 0.5 * (lo + hi);
    } else if (c > 0) {
      x[0] = lo;
    } else if (c < 0) {
      x[0] = hi;
    } else {
      x[0] = std::clamp(0.0, lo, hi);
    }
    return true;
  }

  std::mt19937_64 rng_;
};

}  // namespace

// ---------------------------------------------------------------- Polytope

Polytope::Polytope(int dim) : dim_(dim) {
  if (dim <= 0) throw InputError("Polytope: dimension must be positive");
}

Polytope Polytope::box(const Vec& lo, const Vec& hi) {
  if (lo.size() != hi.size() || lo.size() == 0) throw InputError("Polytope::box: bad bounds");
  const int n = static_cast<int>(lo.size());
  Polytope p(n);
  for (int i = 0; i < n; ++i) {
    if (!(lo[i] <= hi[i])) throw InputError("Polytope::box: lower bound exceeds upper bound");
    Vec e = Vec::Zero(n);
    e[i] = 1.0;
    p.add(Halfspace{e, hi[i]});
    p.add(Halfspace{-e, -lo[i]});
  }
  return p;
}

Polytope& Polytope::add(Halfspace h) {
  check_dim(h.normal, dim_, "Polytope::add");
  if (h.normal.squaredNorm() == 0.0) throw InputError("Halfspace normal must be nonzero");
  halfspaces_.push_back(std::move(h));
  return *this;
}

Polytope& Polytope::add(Hyperplane h) {
  check_dim(h.normal, dim_, "Polytope::add");
  if (h.normal.squaredNorm() == 0.0) throw InputError("Hyperplane normal must be nonzero");
  equalities_.push_back(std::move(h));
  return *this;
}

Polytope Polytope::with(Halfspace h) const {
  Polytope p = *this;
  p.add(std::move(h));
  return p;
}

Polytope Polytope::with(Hyperplane h) const {
  Polytope p = *this;
  p.add(std::move(h));
  return p;
}

Polytope Polytope::translated(const Vec& shift) const {
  check_dim(shift, dim_, "Polytope::translated");
  Polytope p = *this;
  for (auto& h : p.halfspaces_) h.offset += h.normal.dot(shift);
  for (auto& h : p.equalities_) h.offset += h.normal.dot(shift);
  return p;
}

double Polytope::min_slack(const Vec& x) const {
  check_dim(x, dim_, "Polytope::min_slack");
  double s = std::numeric_limits<double>::infinity();
  for (const auto& h : halfspaces_) s = std::min(s, (h.offset - h.normal.dot(x)) / h.normal.norm());
  for (const auto& h : equalities_) {
    s = std::min(s, -std::abs(h.offset - h.normal.dot(x)) / h.normal.norm());
  }
  return s;
}

// ---------------------------------------------------------------- LpProblem

double* LpProblem::add_le(double b) {
  a_.resize(a_.size() + dim_, 0.0);
  b_.push_back(b);
  return a_.data() + a_.size() - dim_;
}

void LpProblem::add_le(const Vec& a, double b) {
  check_dim(a, dim_, "LpProblem::add_le");
  double* r = add_le(b);
  for (int j = 0; j < dim_; ++j) r[j] = a[j];
}

void LpProblem::add_eq(const Vec& a, double b) {
  check_dim(a, dim_, "LpProblem::add_eq");
  aeq_.insert(aeq_.end(), a.data(), a.data() + dim_);
  beq_.push_back(b);
}

void LpProblem::add(const Polytope& p) {
  if (p.dim() != dim_) throw InputError("LpProblem::add: polytope dimension mismatch");
  for (const auto& h : p.halfspaces()) add_le(h.normal, h.offset);
  for (const auto& h : p.equalities()) add_eq(h.normal, h.offset);
}

void LpProblem::add_translated(const Polytope& p, const Vec& shift) {
  if (p.dim() != dim_) throw InputError("LpProblem::add_translated: dimension mismatch");
  for (const auto& h : p.halfspaces()) add_le(h.normal, h.offset + h.normal.dot(shift));
  for (const auto& h : p.equalities()) add_eq(h.normal, h.offset + h.normal.dot(shift));
}

// ---------------------------------------------------------------- solve

LpResult solve(const LpProblem& lp, std::span<const double> objective, std::uint64_t seed) {
  const int n = lp.dim();
  if (static_cast<int>(objective.size()) != n) throw InputError("solve: objective dimension mismatch");

  // Affine parametrization x = P z + p over the free coordinates `free`.
  // Each equality eliminates one coordinate; P stays a column subset plus
  // dense rows for eliminated coordinates.
  Mat P = Mat::Identity(n, n);
  Vec p = Vec::Zero(n);
  for (int e = 0; e < lp.eq_rows(); ++e) {
    Eigen::Map<const Vec> a(lp.eq_row(e), n);
    const double nrm = a.norm();
    if (nrm < kZeroNorm) {
      if (std::abs(lp.eq_rhs(e)) > kFeasTol) return {};
      continue;
    }
    Vec g = (a.transpose() * P).transpose() / nrm;
    const double rhs = (lp.eq_rhs(e) - a.dot(p)) / nrm;
    Eigen::Index k = 0;
    const double gmax = g.cwiseAbs().maxCoeff(&k);
    if (gmax < kZeroNorm) {
      if (std::abs(rhs) > kFeasTol) return {};
      continue;
    }
    // z_k = (rhs - sum_{j!=k} g_j z_j) / g_k
    const Eigen::Index m = P.cols();
    Mat Q = Mat::Zero(m, m - 1);
    Vec q = Vec::Zero(m);
    for (Eigen::Index j = 0, s = 0; j < m; ++j) {
      if (j == k) continue;
      Q(j, s) = 1.0;
      Q(k, s) = -g[j] / g[k];
      ++s;
    }
    q[k] = rhs / g[k];
    p = P * q + p;
    P = P * Q;
  }

  const int d = static_cast<int>(P.cols());
  Eigen::Map<const Vec> c(objective.data(), n);
  LpResult out;

  if (d == 0) {
    for (int i = 0; i < lp.rows(); ++i) {
      Eigen::Map<const Vec> a(lp.row(i), n);
      const double nrm = std::max(a.norm(), 1.0);
      if (a.dot(p) > lp.rhs(i) + kFeasTol * nrm) return out;
    }
    out.status = LpStatus::Optimal;
    out.point = p;
    out.value = c.dot(p);
    return out;
  }

  RowSet rows(d);
  rows.reserve(lp.rows());
  for (int i = 0; i < lp.rows(); ++i) {
    Eigen::Map<const Vec> a(lp.row(i), n);
    double* r = rows.push();
    Eigen::Map<Vec> rz(r, d);
    rz = (a.transpose() * P).transpose();
    r[d] = lp.rhs(i) - a.dot(p);
    r[d + 1] = kFeasTol;
    const int st = normalize_row(r, d);
    if (st == -1) return out;
    if (st == 1) rows.pop();
    if (st == 0) r[d + 1] = kFeasTol;
  }
  Vec cz = (c.transpose() * P).transpose();
  // Scale the objective so tie detection in the base case is not fooled by tiny coefficients.
  for (int j = 0; j < d; ++j) {
    if (std::abs(cz[j]) < 1e-14) cz[j] = 0.0;
  }

  Vec z(d);
  Seidel seidel(seed);
  if (!seidel.run(d, cz.data(), rows, z.data())) return out;

  const bool on_box = (z.cwiseAbs().array() >= kBox * (1.0 - 1e-9)).any();
  if (on_box && cz.squaredNorm() > 0.0) {
    out.status = LpStatus::Unbounded;
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }

  Vec x = P * z + p;
  const double scale = 1.0 + x.cwiseAbs().maxCoeff();
  for (int i = 0; i < lp.rows(); ++i) {
    Eigen::Map<const Vec> a(lp.row(i), n);
    const double nrm = a.norm();
    if (nrm < kZeroNorm) continue;
    if (a.dot(x) - lp.rhs(i) > kCheckTol * nrm * scale) {
      throw NumericalFailure("solve: LP solution violates an inequality by " +
                             std::to_string((a.dot(x) - lp.rhs(i)) / nrm));
    }
  }
  for (int e = 0; e < lp.eq_rows(); ++e) {
    Eigen::Map<const Vec> a(lp.eq_row(e), n);
    const double nrm = std::max(a.norm(), 1.0);
    if (std::abs(a.dot(x) - lp.eq_rhs(e)) > kCheckTol * nrm * scale) {
      throw NumericalFailure("solve: LP solution violates an equality");
    }
  }
  out.status = LpStatus::Optimal;
  out.value = c.dot(x);
  out.point = std::move(x);
  return out;
}

LpResult solve_lp(const Vec& objective, const Polytope& poly,
                  std::span<const Hyperplane> extra_equalities, std::uint64_t seed) {
  check_dim(objective, poly.dim(), "solve_lp");
  LpProblem lp(poly.dim());
  lp.add(poly);
  for (const auto& h : extra_equalities) lp.add_eq(h.normal, h.offset);
  return solve(lp, std::span<const double>(objective.data(), objective.size()), seed);
}

bool is_empty(const Polytope& poly) {
  const Vec zero = Vec::Zero(poly.dim());
  return solve_lp(zero, poly).status == LpStatus::Infeasible;
}

std::pair<Vec, Vec> bounding_box(const Polytope& p) {
  const int n = p.dim();
  Vec lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e[i] = 1.0;
    const LpResult a = solve_lp(e, p);
    const LpResult b = solve_lp(-e, p);
    if (!a.optimal() || !b.optimal()) throw InputError("bounding_box: polytope is empty or unbounded");
    lo[i] = a.value;
    hi[i] = -b.value;
  }
  return {lo, hi};
}

double interior_radius(const LpProblem& lp) {
  const int n = lp.dim();
  LpProblem ext(n + 1);
  ext.reserve(lp.rows() + 1);
  for (int i = 0; i < lp.rows(); ++i) {
    const double* a = lp.row(i);
    double* r = ext.add_le(lp.rhs(i));
    double nrm = 0.0;
    for (int j = 0; j < n; ++j) {
      r[j] = a[j];
      nrm += a[j] * a[j];
    }
    r[n] = std::sqrt(nrm);
  }
  double* cap = ext.add_le(1.0);
  cap[n] = 1.0;
  for (int e = 0; e < lp.eq_rows(); ++e) {
    Vec a = Vec::Zero(n + 1);
    for (int j = 0; j < n; ++j) a[j] = lp.eq_row(e)[j];
    ext.add_eq(a, lp.eq_rhs(e));
  }
  std::vector<double> obj(n + 1, 0.0);
  obj[n] = -1.0;
  const LpResult r = solve(ext, obj);
  if (!r.optimal()) return -std::numeric_limits<double>::infinity();
  return r.point[n];
}

double interior_radius(const Polytope& poly) {
  LpProblem lp(poly.dim());
  lp.add(poly);
  return interior_radius(lp);
}

Side hyperplane_cuts(const Polytope& poly, const Hyperplane& h, double tol) {
  check_dim(h.normal, poly.dim(), "hyperplane_cuts");
  const double nrm = h.normal.norm();
  if (nrm == 0.0) throw InputError("hyperplane_cuts: zero normal");
  const Vec unit = h.normal / nrm;
  const double off = h.offset / nrm;

  const LpResult lo = solve_lp(unit, poly);
  if (lo.status == LpStatus::Infeasible) throw InputError("hyperplane_cuts: empty polytope");
  const LpResult hi = solve_lp(-unit, poly);
  const double min_s = lo.optimal() ? lo.value - off : -std::numeric_limits<double>::infinity();
  const double max_s = hi.optimal() ? -hi.value - off : std::numeric_limits<double>::infinity();

  if (max_s > tol && min_s < -tol) return Side::Cuts;
  if (max_s > tol) return Side::Above;
  return Side::Below;
}

std::vector<Cell> split_by_hyperplanes(const Polytope& poly, std::span<const Hyperplane> hs) {
  for (const auto& h : hs) check_dim(h.normal, poly.dim(), "split_by_hyperplanes");
  std::vector<Cell> cells;
  cells.push_back(Cell{poly, {}});
  for (const auto& h : hs) {
    const double nrm = h.normal.norm();
    if (nrm == 0.0) throw InputError("split_by_hyperplanes: zero normal");
    const Halfspace below{h.normal / nrm, h.offset / nrm};
    const Halfspace above{-h.normal / nrm, -h.offset / nrm};
    std::vector<Cell> next;
    next.reserve(cells.size() * 2);
    for (auto& cell : cells) {
      LpProblem lp_above(poly.dim()), lp_below(poly.dim());
      lp_above.add(cell.region);
      lp_above.add_le(above.normal, above.offset);
      lp_below.add(cell.region);
      lp_below.add_le(below.normal, below.offset);
      const double r_above = interior_radius(lp_above);
      const double r_below = interior_radius(lp_below);
      const bool has_above = r_above > kStrictTol;
      const bool has_below = r_below > kStrictTol;
      if (has_above && has_below) {
        Cell a{cell.region.with(above), cell.sides};
        a.sides.push_back(+1);
        cell.region.add(below);
        cell.sides.push_back(-1);
        next.push_back(std::move(a));
        next.push_back(std::move(cell));
      } else {
        cell.sides.push_back(has_above || (!has_below && r_above > r_below) ? +1 : -1);
        next.push_back(std::move(cell));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

Polytope remove_redundant(const Polytope& poly, double tol) {
  const auto& hs = poly.halfspaces();
  std::vector<char> keep(hs.size(), 1);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    LpProblem lp(poly.dim());
    for (std::size_t j = 0; j < hs.size(); ++j) {
      if (j != i && keep[j]) lp.add_le(hs[j].normal, hs[j].offset);
    }
    for (const auto& e : poly.equalities()) lp.add_eq(e.normal, e.offset);
    const Vec obj = -hs[i].normal;
    const LpResult r = solve(lp, std::span<const double>(obj.data(), poly.dim()));
    if (r.status == LpStatus::Infeasible) return poly;
    const double scale = std::max(1.0, hs[i].normal.norm());
    if (r.optimal() && -r.value <= hs[i].offset + tol * scale) keep[i] = 0;
  }
  Polytope out(poly.dim());
  for (std::size_t i = 0; i < hs.size(); ++i) {
    if (keep[i]) out.add(hs[i]);
  }
  for (const auto& e : poly.equalities()) out.add(e);
  return out;
}

}  // namespace nlcapi
