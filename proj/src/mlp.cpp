#include "nlcapi/mlp.hpp"

#include <cmath>

#include "nlcapi/errors.hpp"

namespace nlcapi {

ParamGrad ParamGrad::zeros_like(const PwaNetwork& net) {
  ParamGrad g;
  for (const auto& l : net.layers()) {
    g.W.push_back(Mat::Zero(l.weights.rows(), l.weights.cols()));
    g.b.push_back(Vec::Zero(l.bias.size()));
  }
  return g;
}

void ParamGrad::set_zero() {
  for (auto& w : W) w.setZero();
  for (auto& v : b) v.setZero();
}

ParamGrad& ParamGrad::operator+=(const ParamGrad& o) {
  for (std::size_t i = 0; i < W.size(); ++i) {
    W[i] += o.W[i];
    b[i] += o.b[i];
  }
  return *this;
}

ParamGrad& ParamGrad::operator*=(double s) {
  for (std::size_t i = 0; i < W.size(); ++i) {
    W[i] *= s;
    b[i] *= s;
  }
  return *this;
}

double ParamGrad::squared_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < W.size(); ++i) s += W[i].squaredNorm() + b[i].squaredNorm();
  return s;
}

double backprop(const PwaNetwork& net, const Vec& x, double scale, ParamGrad& g) {
  if (x.size() != net.input_dim()) throw InputError("backprop: input dimension mismatch");
  const auto& layers = net.layers();
  const auto& act = net.activation();
  const std::size_t L = layers.size();
  std::vector<Vec> inputs(L);
  std::vector<Vec> gains(L);
  Vec z = x;
  for (std::size_t l = 0; l < L; ++l) {
    inputs[l] = z;
    Vec pre = layers[l].weights * z + layers[l].bias;
    if (l + 1 < L) {
      gains[l] = pre.unaryExpr([&](double p) { return act.gain(p > 0.0); });
      z = pre.unaryExpr([&](double p) { return act.apply(p); });
    } else {
      z = pre;
    }
  }
  // delta = d out / d pre-activation of the current layer.
  Vec delta = Vec::Constant(1, scale);
  for (std::size_t l = L; l-- > 0;) {
    g.W[l].noalias() += delta * inputs[l].transpose();
    g.b[l] += delta;
    if (l == 0) break;
    delta = (layers[l].weights.transpose() * delta).cwiseProduct(gains[l - 1]);
  }
  return z[0];
}

Vec input_gradient(const PwaNetwork& net, const Vec& x) {
  return net.affine_piece(net.activation_pattern(x)).C;
}

void gradient_step(PwaNetwork& net, const ParamGrad& g, double lr) {
  auto& layers = net.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weights -= lr * g.W[l];
    layers[l].bias -= lr * g.b[l];
  }
}

Adam::Adam(const PwaNetwork& net, double lr, double beta1, double beta2, double eps)
    : m_(ParamGrad::zeros_like(net)), v_(ParamGrad::zeros_like(net)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(PwaNetwork& net, const ParamGrad& g, const std::vector<Vec>* bias_mask) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto& layers = net.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    m_.W[l] = b1_ * m_.W[l] + (1.0 - b1_) * g.W[l];
    v_.W[l] = b2_ * v_.W[l] + (1.0 - b2_) * g.W[l].cwiseAbs2();
    layers[l].weights.array() -=
        lr_ * (m_.W[l].array() / c1) / ((v_.W[l].array() / c2).sqrt() + eps_);

    m_.b[l] = b1_ * m_.b[l] + (1.0 - b1_) * g.b[l];
    v_.b[l] = b2_ * v_.b[l] + (1.0 - b2_) * g.b[l].cwiseAbs2();
    Vec upd = lr_ * ((m_.b[l].array() / c1) / ((v_.b[l].array() / c2).sqrt() + eps_)).matrix();
    if (bias_mask) upd = upd.cwiseProduct((*bias_mask)[l]);
    layers[l].bias -= upd;
  }
}

}  // namespace nlcapi
