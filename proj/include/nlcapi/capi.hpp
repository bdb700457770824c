#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlcapi/geometry.hpp"
#include "nlcapi/partition.hpp"
#include "nlcapi/pwanet.hpp"

namespace nlcapi {

struct ConstraintPiece {
  Polytope region;  // state coordinates
  AffinePiece piece;
};

/// Continuous PWA constraint; a state is admissible iff c(x) <= 0.
struct PwaConstraint {
  std::string name;
  std::vector<ConstraintPiece> pieces;

  int dim() const { return pieces.empty() ? 0 : static_cast<int>(pieces.front().piece.C.size()); }
  /// Value of the piece whose region contains x (largest slack wins).
  /// Throws NotInDomain when no piece contains x.
  double operator()(const Vec& x) const;
  void validate(int n) const;
};

/// One single-piece constraint per present bound: x_i - upper_i or lower_i - x_i.
std::vector<PwaConstraint> box_constraints(const std::vector<std::optional<double>>& lower,
                                           const std::vector<std::optional<double>>& upper);

/// c(x) = max_k (A_k x - b_k), one piece per row: the region where row k attains the max.
PwaConstraint polytope_constraint(const Mat& A, const Vec& b, std::string name = "polytope");

/// First-layer neurons that cannot meet a constraint region, with the bit a
/// leaf must carry to be skipped.
struct InactiveSet {
  std::vector<std::pair<int, std::uint8_t>> pairs;
  std::uint64_t care = 0;       // neurons with an entry
  std::uint64_t forbidden = 0;  // skipped bit value per neuron

  bool matches(std::uint64_t first_layer_mask) const {
    return (~(first_layer_mask ^ forbidden) & care) != 0;
  }
};

/// first_layer_planes[j] may be empty for degenerate neurons.
InactiveSet find_inactive_hyperplanes(const std::vector<std::optional<Hyperplane>>& first_layer_planes,
                                      const Polytope& pc, double tol = kStrictTol);

/// Min of V over one leaf intersected with one constraint piece's zero set. region_v is in shifted
/// coordinates and is translated by shift before intersecting.
LpResult pair_lp(const AffinePiece& piece_v, const Polytope& region_v, const AffinePiece& piece_c,
                 const Polytope& region_c, const Vec& shift, std::uint64_t seed = kDefaultLpSeed);

struct LevelOptions {
  bool use_ps1 = true;
  bool use_ps2 = true;
  /// Order leaf/target pairs by a bounding-box lower bound and stop once it
  /// exceeds the incumbent.
  bool use_box_bound = true;
  /// Side test tolerance for PS1. Kept far below the strict-interior
  /// tolerance so a skipped pair can change the value by at most Lip * tol.
  double ps1_tol = 1e-10;
  /// |c(x_ref)| below this returns level 0.
  double boundary_tol = 1e-9;
  /// Also stop the level at the boundary of the shifted tree domain, so the
  /// sublevel set stays where V was validated.
  bool cap_to_domain = false;
};

struct LevelCounters {
  long lps_solved = 0;   // pair LPs only
  long infeasible = 0;   // pair LPs that came back infeasible
  long pruned_ps1 = 0;   // pairs skipped by inactive hyperplanes or an empty face
  long pruned_ps2 = 0;   // pairs under subtrees skipped by the lower bound
  long aux_lps = 0;      // face and side tests used by PS1
  long pruned_box = 0;   // pairs skipped by the bounding-box bound
};

struct LevelResult {
  double gamma_star = 0.0;
  bool unbounded = false;  // no constraint boundary inside the domain
  Vec argmin;              // state coordinates; empty when unbounded or early exit
  std::string binding;
  LevelCounters counters;
  double seconds = 0.0;
};

/// Holds the per-tree and per-constraint caches so repeated queries for
/// different references only redo the reference-dependent work.
class LevelSolver {
 public:
  LevelSolver(const PartitionTree& tree, const PwaNetwork& net, ReferenceMap emap,
              std::vector<PwaConstraint> constraints);

  LevelResult solve(const Vec& r, const LevelOptions& opts = {}) const;

  /// Admissible set {A x <= b}; one LP per leaf per facet.
  /// facet < 0 takes the min over every facet.
  LevelResult solve_convex(const Mat& A, const Vec& b, const Vec& r, int facet = -1,
                           const LevelOptions& opts = {}) const;

  const std::vector<PwaConstraint>& constraints() const { return constraints_; }
  const ReferenceMap& reference_map() const { return emap_; }
  const PartitionTree& tree() const { return *tree_; }

 private:
  struct Target {
    int owner;  // constraint or facet index
    const Polytope* region;
    AffinePiece piece;
  };
  LevelResult traverse(const std::vector<Target>& targets, const std::vector<std::string>& names,
                       const Vec& shift, const LevelOptions& opts) const;
  void add_domain_targets(const Vec& shift, const LevelOptions& opts, std::vector<Target>& targets,
                          std::vector<std::string>& names) const;

  const PartitionTree* tree_;
  ReferenceMap emap_;
  std::vector<PwaConstraint> constraints_;
  Polytope whole_space_;
  std::vector<std::vector<char>> active_;  // per constraint, per piece: some state is inadmissible
  std::vector<std::optional<Hyperplane>> first_planes_;
  std::vector<std::uint64_t> leaf_mask_;   // indexed by node
  std::vector<long> subtree_leaves_;
  std::vector<Vec> box_lo_, box_hi_;       // leaf bounding boxes in tree coordinates
};

/// Largest level whose sublevel set satisfies every constraint. Throws InfeasibleReference when the reference equilibrium violates a constraint.
LevelResult max_admissible_level(const PartitionTree& tree, const PwaNetwork& net,
                                 const std::vector<PwaConstraint>& constraints, const Vec& r,
                                 const ReferenceMap& emap, const LevelOptions& opts = {});

/// Convex admissible set {A x <= b}; facet < 0 takes every facet.
LevelResult max_admissible_level_convex(const PartitionTree& tree, const PwaNetwork& net,
                                        const Mat& A, const Vec& b, int facet, const Vec& r,
                                        const ReferenceMap& emap, const LevelOptions& opts = {});

/// Grid reference value: zero crossings of every constraint along grid edges
/// of the shifted domain box, V evaluated there by forward passes. In 2-D the
/// zero segment inside each straddling cell is additionally sampled at
/// `segment_samples` points. Returns +inf when no crossing exists.
double grid_oracle_gamma(const PwaNetwork& net, const ReferenceMap& emap,
                         const std::vector<PwaConstraint>& constraints, const Vec& r,
                         const Vec& domain_lo, const Vec& domain_hi, int resolution,
                         int segment_samples = 32);

}  // namespace nlcapi
