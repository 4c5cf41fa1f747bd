#pragma once

#include <cmath>

#include "dkit/types.hpp"

namespace dkit {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment buffers for one flat parameter vector.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(Eigen::Index n, AdamParams params = {})
      : params_(params), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

  // In-place update of `x` with gradient `grad` at learning rate `lr`.
  template <typename X, typename G>
  void step(Eigen::DenseBase<X>& x, const Eigen::DenseBase<G>& grad, double lr) {
    ++t_;
    m_.array() = params_.beta1 * m_.array() + (1.0 - params_.beta1) * grad.derived().array();
    v_.array() = params_.beta2 * v_.array() + (1.0 - params_.beta2) * grad.derived().array().square();
    const double c1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
    x.derived().array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + params_.epsilon);
  }

  long steps() const { return t_; }

 private:
  AdamParams params_;
  Vector m_, v_;
  long t_ = 0;
};

}  // namespace dkit
