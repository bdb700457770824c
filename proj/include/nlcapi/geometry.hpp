#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace nlcapi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Constraint satisfaction tolerance for LP solutions (unit-normal rows).
inline constexpr double kFeasTol = 1e-9;
/// A cell must contain a ball of this radius to count as full-dimensional.
inline constexpr double kStrictTol = 1e-7;
inline constexpr std::uint64_t kDefaultLpSeed = 0x5eed'1991ULL;

/// {x : normal . x <= offset}
struct Halfspace {
  Vec normal;
  double offset = 0.0;
};

/// {x : normal . x == offset}
struct Hyperplane {
  Vec normal;
  double offset = 0.0;
};

/// Intersection of halfspaces and hyperplanes in R^dim. Redundant rows are kept.
class Polytope {
 public:
  Polytope() = default;
  explicit Polytope(int dim);

  /// Axis-aligned box lo <= x <= hi.
  static Polytope box(const Vec& lo, const Vec& hi);

  int dim() const { return dim_; }
  const std::vector<Halfspace>& halfspaces() const { return halfspaces_; }
  const std::vector<Hyperplane>& equalities() const { return equalities_; }

  Polytope& add(Halfspace h);
  Polytope& add(Hyperplane h);
  Polytope with(Halfspace h) const;
  Polytope with(Hyperplane h) const;

  /// {x + shift : x in this}
  Polytope translated(const Vec& shift) const;

  /// Smallest slack over all rows (normalized); negative when x is outside.
  double min_slack(const Vec& x) const;
  bool contains(const Vec& x, double tol = kFeasTol) const { return min_slack(x) >= -tol; }

 private:
  int dim_ = 0;
  std::vector<Halfspace> halfspaces_;
  std::vector<Hyperplane> equalities_;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  double value = 0.0;
  Vec point;  // set iff status == Optimal

  bool optimal() const { return status == LpStatus::Optimal; }
};

/// Row-major LP data: minimize c.x subject to A x <= b, Aeq x == beq.
/// Built directly by the hot loops to avoid going through Polytope.
class LpProblem {
 public:
  explicit LpProblem(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  int rows() const { return static_cast<int>(b_.size()); }
  int eq_rows() const { return static_cast<int>(beq_.size()); }

  void reserve(int rows) {
    a_.reserve(static_cast<std::size_t>(rows) * dim_);
    b_.reserve(rows);
  }
  /// Appends a . x <= b; returns a pointer to the new row's coefficients (zeroed).
  double* add_le(double b);
  void add_le(const Vec& a, double b);
  void add_eq(const Vec& a, double b);
  void add(const Polytope& p);
  /// Appends every row of p evaluated at x - shift (i.e. the polytope translated by +shift).
  void add_translated(const Polytope& p, const Vec& shift);

  const double* row(int i) const { return a_.data() + static_cast<std::size_t>(i) * dim_; }
  double rhs(int i) const { return b_[i]; }
  const double* eq_row(int i) const { return aeq_.data() + static_cast<std::size_t>(i) * dim_; }
  double eq_rhs(int i) const { return beq_[i]; }

 private:
  int dim_;
  std::vector<double> a_, b_, aeq_, beq_;
};

/// Seidel's randomized incremental LP. Deterministic for a given seed.
/// Throws NumericalFailure if the returned point fails the post-check.
LpResult solve(const LpProblem& lp, std::span<const double> objective,
               std::uint64_t seed = kDefaultLpSeed);

/// Minimizes objective . x over poly intersected with extra_equalities.
LpResult solve_lp(const Vec& objective, const Polytope& poly,
                  std::span<const Hyperplane> extra_equalities = {},
                  std::uint64_t seed = kDefaultLpSeed);

bool is_empty(const Polytope& poly);

/// Bounding box of a polytope (one LP per side).
std::pair<Vec, Vec> bounding_box(const Polytope& p);

/// Radius of the largest ball (relative to the equality hull) inside lp's
/// inequality rows, capped at 1. Returns -inf when infeasible.
double interior_radius(const LpProblem& lp);
double interior_radius(const Polytope& poly);

enum class Side { Above, Below, Cuts };

/// Above: poly lies in {normal.x >= offset} (up to tol); Below: in {normal.x <= offset}.
/// Decided from the max and min signed distance of poly to h.
Side hyperplane_cuts(const Polytope& poly, const Hyperplane& h, double tol = kStrictTol);

struct Cell {
  Polytope region;
  /// Per input hyperplane: +1 if the cell lies on the normal.x > offset side, else -1.
  std::vector<std::int8_t> sides;
};

/// Same set without inequality rows implied by the others (up to tol).
Polytope remove_redundant(const Polytope& poly, double tol = 1e-10);

/// Full-dimensional cells of the arrangement of hs restricted to poly.
std::vector<Cell> split_by_hyperplanes(const Polytope& poly, std::span<const Hyperplane> hs);

}  // namespace nlcapi
