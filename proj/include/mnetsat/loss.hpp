#pragma once

#include "mnetsat/ops.hpp"

namespace mnetsat::train {

struct LossConfig {
  double gamma = 0.5;
  double delta = 0.5;
  double epsilon = 1.0;

  void validate() const;
};

// Soft Dice: 1 - (2*sum(yg*yp) + eps) / (sum(yg + yp) + eps). Scalar in [0,1).
template <typename T>
Var<T> dice_loss(Var<T> y_pred, Var<T> y_true, T eps);

// Mean binary cross-entropy; predictions clamped to [1e-7, 1-1e-7].
template <typename T>
Var<T> bce_loss(Var<T> y_pred, Var<T> y_true);

// gamma * dice + delta * bce.
template <typename T>
Var<T> total_loss(Var<T> y_pred, Var<T> y_true, const LossConfig& cfg);

template <typename T>
T dice_loss_value(const Tensor<T>& y_pred, const Tensor<T>& y_true, T eps);
template <typename T>
T bce_loss_value(const Tensor<T>& y_pred, const Tensor<T>& y_true);
template <typename T>
T total_loss_value(const Tensor<T>& y_pred, const Tensor<T>& y_true, const LossConfig& cfg);

}  // namespace mnetsat::train
