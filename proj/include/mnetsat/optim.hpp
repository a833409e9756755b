#pragma once

#include <functional>
#include <unordered_map>

#include "mnetsat/params.hpp"

namespace mnetsat::train {

/// Bias-corrected Adam; keeps first/second moment state per parameter name.
template <typename T>
class Adam {
 public:
  explicit Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // grad_of returns the gradient for a parameter name, or nullptr for a zero
  // gradient. Updates parameters in place.
  void step(ParamBundle<T>& params,
            const std::function<const Tensor<T>*(const std::string&)>& grad_of, T lr);

  int64_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  std::unordered_map<std::string, Slot> slots_;
  T beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct PlateauConfig {
  double factor = 0.5;
  int patience = 5;
  double min_improvement = 1e-4;
  double min_lr = 1e-6;

  void validate() const;
};

/// Halves the learning rate after `patience` epochs without the monitored
/// metric improving by more than min_improvement (higher is better).
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, PlateauConfig cfg);

  double observe(double metric);  // returns the lr to use next
  double lr() const { return lr_; }

 private:
  PlateauConfig cfg_;
  double lr_;
  double best_;
  bool seen_ = false;
  int stale_ = 0;
};

}  // namespace mnetsat::train
