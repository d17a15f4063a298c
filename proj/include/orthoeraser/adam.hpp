#pragma once

#include <cmath>

#include <Eigen/Core>

namespace orthoeraser {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates for one dense parameter block.
template <typename Dense>
class AdamSlot {
 public:
  explicit AdamSlot(const Dense& like)
      : m_(Dense::Zero(like.rows(), like.cols())), v_(Dense::Zero(like.rows(), like.cols())) {}

  /// `step` is the 1-based global step count used for bias correction.
  void update(Dense& param, const Dense& grad, const AdamHyper& hyper, long step) {
    m_ = hyper.beta1 * m_ + (1.0 - hyper.beta1) * grad;
    v_ = hyper.beta2 * v_ + (1.0 - hyper.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    param.array() -= hyper.learning_rate * (m_.array() / c1) /
                     ((v_.array() / c2).sqrt() + hyper.epsilon);
  }

 private:
  Dense m_;
  Dense v_;
};

}  // namespace orthoeraser
