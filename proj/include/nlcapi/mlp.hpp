#pragma once

#include <vector>

#include "nlcapi/pwanet.hpp"

namespace nlcapi {

/// Parameter-shaped buffer for gradients and optimizer moments.
struct ParamGrad {
  std::vector<Mat> W;
  std::vector<Vec> b;

  static ParamGrad zeros_like(const PwaNetwork& net);
  void set_zero();
  ParamGrad& operator+=(const ParamGrad& o);
  ParamGrad& operator*=(double s);
  double squared_norm() const;
};

/// Adds scale * d forward(x) / d params into g and returns forward(x).
/// At a kink the inactive-side gain is used, matching activation_pattern.
double backprop(const PwaNetwork& net, const Vec& x, double scale, ParamGrad& g);

/// Gradient with respect to the input, on the region that contains x.
Vec input_gradient(const PwaNetwork& net, const Vec& x);

/// net.params -= lr * g
void gradient_step(PwaNetwork& net, const ParamGrad& g, double lr);

class Adam {
 public:
  explicit Adam(const PwaNetwork& net, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  /// bias_mask[l][i] == 0 freezes that bias.
  void step(PwaNetwork& net, const ParamGrad& g, const std::vector<Vec>* bias_mask = nullptr);
  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamGrad m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace nlcapi
