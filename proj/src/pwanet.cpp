#include "nlcapi/pwanet.hpp"

#include <cmath>
#include <string>

#include "nlcapi/errors.hpp"

namespace nlcapi {

namespace {
constexpr double kDegenerateNormal = 1e-12;
}

Activation Activation::leaky_relu(double slope) {
  // slope = 1 would make the network affine and slope < 0 breaks the
  // monotone pattern algebra.
  if (!(slope >= 0.0 && slope < 1.0)) throw InputError("leaky_relu: slope must be in [0, 1)");
  return Activation{Kind::LeakyReLU, slope};
}

std::uint64_t ActivationPattern::first_layer_mask() const {
  if (bits.empty()) return 0;
  if (bits[0].size() > 64) throw InputError("first_layer_mask: first layer wider than 64");
  std::uint64_t m = 0;
  for (std::size_t j = 0; j < bits[0].size(); ++j) {
    if (bits[0][j]) m |= std::uint64_t{1} << j;
  }
  return m;
}

std::size_t ActivationPatternHash::operator()(const ActivationPattern& ap) const noexcept {
  std::size_t h = 1469598103934665603ULL;
  for (const auto& layer : ap.bits) {
    for (auto b : layer) {
      h ^= b + 0x9e;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

Vec ReferenceMap::equilibrium(const Vec& r) const {
  if (r.size() != E.cols()) throw InputError("ReferenceMap: reference dimension mismatch");
  return E * r;
}

PwaNetwork::PwaNetwork(std::vector<DenseLayer> layers, Activation act)
    : layers_(std::move(layers)), act_(act) {
  validate();
  input_dim_ = static_cast<int>(layers_.front().weights.cols());
}

void PwaNetwork::validate() const {
  if (layers_.empty()) throw InputError("PwaNetwork: no layers");
  Eigen::Index prev = layers_.front().weights.cols();
  if (prev <= 0) throw InputError("PwaNetwork: input dimension must be positive");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weights.cols() != prev) {
      throw InputError("PwaNetwork: layer " + std::to_string(i) + " expects " +
                       std::to_string(l.weights.cols()) + " inputs, previous layer has " +
                       std::to_string(prev));
    }
    if (l.bias.size() != l.weights.rows() || l.weights.rows() == 0) {
      throw InputError("PwaNetwork: layer " + std::to_string(i) + " bias/width mismatch");
    }
    if (!l.weights.allFinite() || !l.bias.allFinite()) {
      throw InputError("PwaNetwork: non-finite parameter in layer " + std::to_string(i));
    }
    prev = l.weights.rows();
  }
}

int PwaNetwork::total_neurons() const {
  int n = 0;
  for (int l = 0; l < hidden_layers(); ++l) n += width(l);
  return n;
}

double PwaNetwork::forward(const Vec& x) const {
  if (x.size() != input_dim_) throw InputError("forward: input dimension mismatch");
  Vec z = x;
  for (int l = 0; l < hidden_layers(); ++l) {
    z = layers_[l].weights * z + layers_[l].bias;
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = act_.apply(z[j]);
  }
  const auto& out = layers_.back();
  return (out.weights * z + out.bias)[0];
}

ActivationPattern PwaNetwork::activation_pattern(const Vec& x) const {
  if (x.size() != input_dim_) throw InputError("activation_pattern: input dimension mismatch");
  ActivationPattern ap;
  ap.bits.resize(hidden_layers());
  Vec z = x;
  for (int l = 0; l < hidden_layers(); ++l) {
    z = layers_[l].weights * z + layers_[l].bias;
    auto& bits = ap.bits[l];
    bits.resize(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      bits[j] = z[j] > 0.0 ? 1 : 0;
      z[j] = act_.apply(z[j]);
    }
  }
  return ap;
}

LayerMap PwaNetwork::prefix_map(const ActivationPattern& ap, int upto) const {
  if (upto < 0 || upto > hidden_layers() || static_cast<int>(ap.bits.size()) < upto) {
    throw InputError("prefix_map: pattern does not cover the requested layers");
  }
  LayerMap map{Mat::Identity(input_dim_, input_dim_), Vec::Zero(input_dim_)};
  for (int l = 0; l < upto; ++l) {
    const auto& layer = layers_[l];
    const auto& bits = ap.bits[l];
    if (static_cast<Eigen::Index>(bits.size()) != layer.weights.rows()) {
      throw InputError("prefix_map: pattern width mismatch at layer " + std::to_string(l));
    }
    Mat M = layer.weights * map.M;
    Vec m = layer.weights * map.m + layer.bias;
    for (Eigen::Index j = 0; j < M.rows(); ++j) {
      const double g = act_.gain(bits[j] != 0);
      M.row(j) *= g;
      m[j] *= g;
    }
    map.M = std::move(M);
    map.m = std::move(m);
  }
  return map;
}

LayerMap PwaNetwork::pre_activation_map(const ActivationPattern& ap_prefix, int l) const {
  if (l < 0 || l > hidden_layers()) throw InputError("pre_activation_map: bad layer index");
  const LayerMap in = prefix_map(ap_prefix, l);
  const auto& layer = layers_[l];
  return {layer.weights * in.M, layer.weights * in.m + layer.bias};
}

AffinePiece PwaNetwork::affine_piece(const ActivationPattern& ap) const {
  const LayerMap out = pre_activation_map(ap, hidden_layers());
  return {out.M.row(0).transpose(), out.m[0]};
}

std::optional<Hyperplane> PwaNetwork::neuron_hyperplane(const ActivationPattern& ap_prefix, int l,
                                                        int j) const {
  if (l < 0 || l >= hidden_layers()) throw InputError("neuron_hyperplane: not a hidden layer");
  if (j < 0 || j >= width(l)) throw InputError("neuron_hyperplane: neuron index out of range");
  const LayerMap pre = pre_activation_map(ap_prefix, l);
  Vec normal = pre.M.row(j).transpose();
  if (normal.norm() <= kDegenerateNormal) return std::nullopt;
  return Hyperplane{std::move(normal), -pre.m[j]};
}

void PwaNetwork::require_zero_at_origin(double tol) const {
  const double v0 = forward(Vec::Zero(input_dim_));
  if (!(std::abs(v0) <= tol)) {
    throw InputError("Lyapunov network must vanish at the origin, got V(0) = " + std::to_string(v0));
  }
}

double rdlf_value(const PwaNetwork& net, const ReferenceMap& emap, const Vec& x, const Vec& r) {
  if (x.size() != emap.state_dim()) throw InputError("rdlf_value: state dimension mismatch");
  return net.forward(x - emap.equilibrium(r));
}

}  // namespace nlcapi
