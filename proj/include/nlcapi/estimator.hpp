#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlcapi/capi.hpp"
#include "nlcapi/mlp.hpp"
#include "nlcapi/partition.hpp"
#include "nlcapi/pwanet.hpp"

namespace nlcapi {

/// E(r) = max(0, net(r)).
struct EstimatorNet {
  PwaNetwork net;
  bool verified = false;
  int iterations = 0;
  long dataset_size = 0;
  std::string dataset_hash;

  double operator()(const Vec& r) const { return std::max(0.0, net.forward(r)); }
  /// The same function as one network: an extra width-1 ReLU layer.
  PwaNetwork clamped() const;
};

struct VerifyResult {
  double opt_value = -std::numeric_limits<double>::infinity();
  Vec witness_x, witness_r;
  bool verified = false;
  long triples = 0;         // (V leaf, E leaf, constraint piece) combinations
  long lps_solved = 0;
  long skipped_level = 0;   // V lower bound above E upper bound
  long skipped_bound = 0;   // cheap upper bound on c below the incumbent
  long infeasible = 0;
  double seconds = 0.0;
};

/// Exact max of c(x) over {(x, r) : r in R, x - E r in the tree domain, V(x, r) <= E(r)}
/// by enumerating every linear region. v_tree must be annotated.
VerifyResult verify_estimator(const PartitionTree& v_tree, const PwaNetwork& v_net,
                              const ReferenceMap& emap, const EstimatorNet& e_net,
                              const std::vector<PwaConstraint>& constraints, const Polytope& r_domain);

struct TrainingSample {
  Vec r;
  double gamma = 0.0;
  bool counterexample = false;
};

using LevelOracle = std::function<double(const Vec&)>;

/// n uniform samples over the box hull of r_domain, rejected outside it.
std::vector<TrainingSample> pretrain_dataset(const LevelOracle& q, const Polytope& r_domain, int n,
                                             std::uint64_t seed);

/// Mean of (net(r) - target)^2 and its parameter gradient.
double mse_loss(const PwaNetwork& net, const std::vector<Vec>& inputs, const std::vector<double>& targets,
                ParamGrad* grad = nullptr);

struct EstimatorConfig {
  std::vector<int> hidden = {8, 4};
  int n_pretrain = 200;
  int max_iters = 50;
  double lr = 0.05;
  int pretrain_steps = 20000;
  int steps_per_iter = 3000;
  double margin = 0.02;
  int neighbors = 4;
  double jitter = 1e-3;
  std::uint64_t seed = 3;
  /// Multiplies the initial weights; large values exercise the recovery path.
  double init_scale = 1.0;
  double init_bias = 0.0;
};

struct Unverified : std::runtime_error {
  Unverified(const std::string& what, VerifyResult last) : std::runtime_error(what), last(std::move(last)) {}
  VerifyResult last;
};

struct TrainLog {
  std::vector<VerifyResult> verifications;
  std::vector<TrainingSample> dataset;
  double seconds = 0.0;
};

/// Counterexample-guided training. Throws Unverified after max_iters.
EstimatorNet train_estimator(const LevelOracle& q, const PartitionTree& v_tree, const PwaNetwork& v_net,
                             const ReferenceMap& emap, const std::vector<PwaConstraint>& constraints,
                             const Polytope& r_domain, const EstimatorConfig& cfg = {},
                             TrainLog* log = nullptr);

}  // namespace nlcapi
