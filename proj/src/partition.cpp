#include "nlcapi/partition.hpp"

#include <chrono>
#include <limits>
#include <string>

#include "nlcapi/errors.hpp"

namespace nlcapi {

namespace {

void require_bounded(const Polytope& domain) {
  for (int i = 0; i < domain.dim(); ++i) {
    Vec e = Vec::Zero(domain.dim());
    e[i] = 1.0;
    for (double s : {1.0, -1.0}) {
      const LpResult r = solve_lp(s * e, domain);
      if (r.status == LpStatus::Infeasible) throw InputError("partition domain is empty");
      if (r.status == LpStatus::Unbounded) throw InputError("partition domain is unbounded");
    }
  }
}

}  // namespace

PartitionTree::PartitionTree(Polytope domain, int depth, std::vector<PartitionNode> nodes,
                             TreeStats stats, bool annotated)
    : domain_(std::move(domain)),
      depth_(depth),
      nodes_(std::move(nodes)),
      stats_(stats),
      annotated_(annotated) {
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    if (nodes_[i].is_leaf()) leaves_.push_back(i);
  }
  stats_.node_count = static_cast<int>(nodes_.size());
  stats_.leaf_count = static_cast<int>(leaves_.size());
}

const PartitionNode& PartitionTree::locate(const Vec& x) const {
  if (empty()) throw InputError("locate: empty tree");
  if (!domain_.contains(x, kFeasTol)) throw NotInDomain("locate: point outside the tree domain");
  int cur = 0;
  while (!nodes_[cur].is_leaf()) {
    int best = -1;
    double best_slack = -std::numeric_limits<double>::infinity();
    for (int c : nodes_[cur].children) {
      const double s = nodes_[c].region.min_slack(x);
      if (s > best_slack) {
        best_slack = s;
        best = c;
      }
      if (s >= 0.0) break;
    }
    cur = best;
  }
  return nodes_[cur];
}

PartitionTree build_partition_tree(const PwaNetwork& net, const Polytope& domain) {
  if (domain.dim() != net.input_dim()) throw InputError("build_partition_tree: domain dimension mismatch");
  require_bounded(domain);
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<PartitionNode> nodes;
  PartitionNode root;
  root.region = domain;
  nodes.push_back(std::move(root));

  std::vector<int> frontier{0};
  for (int l = 0; l < net.hidden_layers(); ++l) {
    std::vector<int> next;
    for (int idx : frontier) {
      // Copy: nodes may reallocate while children are appended.
      const ActivationPattern prefix = nodes[idx].pattern;
      const LayerMap pre = net.pre_activation_map(prefix, l);
      const int w = net.width(l);

      std::vector<Hyperplane> planes;
      std::vector<int> plane_neuron;
      std::vector<std::uint8_t> fixed_bits(w, 0);
      for (int j = 0; j < w; ++j) {
        Vec normal = pre.M.row(j).transpose();
        if (normal.norm() <= 1e-12) {
          fixed_bits[j] = pre.m[j] > 0.0 ? 1 : 0;
          continue;
        }
        planes.push_back(Hyperplane{std::move(normal), -pre.m[j]});
        plane_neuron.push_back(j);
      }

      std::vector<Cell> cells = split_by_hyperplanes(nodes[idx].region, planes);
      for (auto& cell : cells) {
        PartitionNode child;
        child.layer = l + 1;
        child.parent = idx;
        child.pattern = prefix;
        std::vector<std::uint8_t> bits = fixed_bits;
        for (std::size_t k = 0; k < planes.size(); ++k) bits[plane_neuron[k]] = cell.sides[k] > 0 ? 1 : 0;
        child.pattern.bits.push_back(std::move(bits));
        child.region = remove_redundant(cell.region);
        if (child.layer == net.hidden_layers()) child.piece = net.affine_piece(child.pattern);
        const int cidx = static_cast<int>(nodes.size());
        nodes.push_back(std::move(child));
        nodes[idx].children.push_back(cidx);
        next.push_back(cidx);
      }
    }
    frontier = std::move(next);
  }
  if (net.hidden_layers() == 0) nodes[0].piece = net.affine_piece(ActivationPattern{});

  TreeStats stats;
  stats.build_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return PartitionTree(domain, net.hidden_layers(), std::move(nodes), stats);
}

void annotate_lower_bounds(PartitionTree& tree, const PwaNetwork& net) {
  if (tree.empty()) throw InputError("annotate_lower_bounds: empty tree");
  const auto t0 = std::chrono::steady_clock::now();
  const int n = static_cast<int>(tree.nodes().size());
  for (int leaf : tree.leaves()) {
    PartitionNode& node = tree.mutable_node(leaf);
    if (node.piece.C.size() != net.input_dim()) {
      throw InputError("annotate_lower_bounds: leaf " + std::to_string(leaf) + " has no affine piece");
    }
    try {
      const LpResult lo = solve_lp(node.piece.C, node.region);
      const LpResult hi = solve_lp(-node.piece.C, node.region);
      if (!lo.optimal() || !hi.optimal()) {
        throw NumericalFailure("leaf region is empty or unbounded");
      }
      node.v_lower = lo.value + node.piece.d;
      node.v_upper = -hi.value + node.piece.d;
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("annotate_lower_bounds: leaf " + std::to_string(leaf) + ": " + e.what());
    }
  }
  // Children always have larger indices than their parent.
  for (int i = n - 1; i >= 0; --i) {
    PartitionNode& node = tree.mutable_node(i);
    if (node.is_leaf()) continue;
    node.v_lower = std::numeric_limits<double>::infinity();
    node.v_upper = -std::numeric_limits<double>::infinity();
    for (int c : node.children) {
      node.v_lower = std::min(node.v_lower, tree.node(c).v_lower);
      node.v_upper = std::max(node.v_upper, tree.node(c).v_upper);
    }
  }
  tree.set_annotated(true);
  tree.mutable_stats().annotate_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace nlcapi
