#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nlcapi/geometry.hpp"

namespace nlcapi {

struct Activation {
  enum class Kind { ReLU, LeakyReLU };
  Kind kind = Kind::ReLU;
  double slope = 0.0;  // negative-side slope; 0 for ReLU

  static Activation relu() { return {}; }
  static Activation leaky_relu(double slope);

  double apply(double z) const { return z > 0.0 ? z : slope * z; }
  /// Diagonal entry of the pattern matrix for a neuron with the given bit.
  double gain(bool active) const { return active ? 1.0 : slope; }
};

struct DenseLayer {
  Mat weights;  // rows = outputs, cols = inputs
  Vec bias;
};

/// Per-hidden-layer activation bits; bit 1 iff the pre-activation is > 0.
struct ActivationPattern {
  std::vector<std::vector<std::uint8_t>> bits;

  bool operator==(const ActivationPattern&) const = default;
  auto operator<=>(const ActivationPattern&) const = default;

  /// First hidden layer packed into a mask (requires width <= 64).
  std::uint64_t first_layer_mask() const;
};

struct ActivationPatternHash {
  std::size_t operator()(const ActivationPattern& ap) const noexcept;
};

/// Scalar affine map x -> C.x + d.
struct AffinePiece {
  Vec C;
  double d = 0.0;

  double operator()(const Vec& x) const { return C.dot(x) + d; }
};

/// x_ref = E r; the equilibrium associated with a reference.
struct ReferenceMap {
  Mat E;

  int state_dim() const { return static_cast<int>(E.rows()); }
  int reference_dim() const { return static_cast<int>(E.cols()); }
  Vec equilibrium(const Vec& r) const;
};

/// Affine map from the input to a layer's activations on one region.
struct LayerMap {
  Mat M;
  Vec m;
};

/// Feed-forward network with one single-breakpoint activation on every
/// hidden layer and an affine scalar output.
class PwaNetwork {
 public:
  PwaNetwork() = default;
  PwaNetwork(std::vector<DenseLayer> layers, Activation act = Activation::relu());

  int input_dim() const { return input_dim_; }
  int output_dim() const { return static_cast<int>(layers_.back().weights.rows()); }
  /// L - 1 in the usual notation.
  int hidden_layers() const { return static_cast<int>(layers_.size()) - 1; }
  int width(int hidden) const { return static_cast<int>(layers_[hidden].weights.rows()); }
  int total_neurons() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }
  const Activation& activation() const { return act_; }

  double forward(const Vec& x) const;
  ActivationPattern activation_pattern(const Vec& x) const;

  /// Affine map x -> z^(l) for inputs sharing the first `upto` layers of ap.
  LayerMap prefix_map(const ActivationPattern& ap, int upto) const;
  AffinePiece affine_piece(const ActivationPattern& ap) const;

  /// {x : pre-activation of neuron j in hidden layer l = 0} for inputs whose
  /// first l layers follow ap_prefix. Layers are 0-based here. Returns
  /// nullopt when the pre-activation is constant on the region.
  std::optional<Hyperplane> neuron_hyperplane(const ActivationPattern& ap_prefix, int l,
                                              int j) const;
  /// Pre-activation of hidden layer l as an affine map (rows = neurons).
  LayerMap pre_activation_map(const ActivationPattern& ap_prefix, int l) const;

  /// Throws InputError unless |forward(0)| <= tol.
  void require_zero_at_origin(double tol = 1e-8) const;

 private:
  void validate() const;

  std::vector<DenseLayer> layers_;
  Activation act_;
  int input_dim_ = 0;
};

/// V(x, r) = V'(x - E r).
double rdlf_value(const PwaNetwork& net, const ReferenceMap& emap, const Vec& x, const Vec& r);

}  // namespace nlcapi
