#pragma once

#include <vector>

#include "nlcapi/geometry.hpp"
#include "nlcapi/pwanet.hpp"

namespace nlcapi {

struct PartitionNode {
  Polytope region;
  /// Depth in the tree: 0 is the domain, leaves sit at net.hidden_layers().
  int layer = 0;
  int parent = -1;
  std::vector<int> children;
  /// Bits for hidden layers < layer. Complete at leaves.
  ActivationPattern pattern;
  AffinePiece piece;  // leaves only
  double v_lower = 0.0;
  double v_upper = 0.0;  // max of the network over the region (extension)

  bool is_leaf() const { return children.empty(); }
};

struct TreeStats {
  int node_count = 0;
  int leaf_count = 0;
  double build_seconds = 0.0;
  double annotate_seconds = 0.0;
};

/// Layer-by-layer split of the domain by neuron hyperplanes. Nodes are
/// stored flat; node 0 is the root.
class PartitionTree {
 public:
  PartitionTree() = default;
  PartitionTree(Polytope domain, int depth, std::vector<PartitionNode> nodes, TreeStats stats,
                bool annotated = false);

  const Polytope& domain() const { return domain_; }
  int depth() const { return depth_; }
  const PartitionNode& root() const { return nodes_.front(); }
  const PartitionNode& node(int i) const { return nodes_[i]; }
  PartitionNode& mutable_node(int i) { return nodes_[i]; }
  const std::vector<PartitionNode>& nodes() const { return nodes_; }
  const std::vector<int>& leaves() const { return leaves_; }
  const TreeStats& stats() const { return stats_; }
  TreeStats& mutable_stats() { return stats_; }
  bool annotated() const { return annotated_; }
  void set_annotated(bool a) { annotated_ = a; }
  bool empty() const { return nodes_.empty(); }

  /// Leaf whose region contains x. Throws NotInDomain outside the domain.
  const PartitionNode& locate(const Vec& x) const;

 private:
  Polytope domain_;
  int depth_ = 0;
  std::vector<PartitionNode> nodes_;
  std::vector<int> leaves_;
  TreeStats stats_;
  bool annotated_ = false;
};

/// Builds the tree over a bounded domain. Leaves carry their affine piece and
/// full activation pattern; bounds are filled by annotate_lower_bounds.
PartitionTree build_partition_tree(const PwaNetwork& net, const Polytope& domain);

/// One min/max LP per leaf, then parent = min (resp. max) over children.
void annotate_lower_bounds(PartitionTree& tree, const PwaNetwork& net);

}  // namespace nlcapi
