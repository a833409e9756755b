#include "mnetsat/loss.hpp"

namespace mnetsat::train {

void LossConfig::validate() const {
  if (gamma < 0 || delta < 0 || gamma + delta <= 0)
    throw std::invalid_argument("loss weights must be non-negative with a positive sum");
  if (epsilon <= 0) throw std::invalid_argument("dice smoothing must be positive");
}

namespace {

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": prediction " + shape_str(a.shape()) +
                                " vs mask " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Var<T> dice_loss(Var<T> y_pred, Var<T> y_true, T eps) {
  check_same_shape(y_pred, y_true, "dice_loss");
  auto inter = ops::reduce_all(ops::Reduce::kSum, ops::mul(y_pred, y_true));
  auto denom = ops::reduce_all(ops::Reduce::kSum, ops::add(y_pred, y_true));
  auto ratio = ops::div(ops::add_scalar(ops::mul_scalar(inter, T(2)), eps),
                        ops::add_scalar(denom, eps));
  return ops::add_scalar(ops::mul_scalar(ratio, T(-1)), T(1));
}

template <typename T>
Var<T> bce_loss(Var<T> y_pred, Var<T> y_true) {
  check_same_shape(y_pred, y_true, "bce_loss");
  auto p = ops::clamp(y_pred, T(1e-7), T(1.0 - 1e-7));
  auto pos = ops::mul(y_true, ops::log(p));
  auto one_minus_t = ops::add_scalar(ops::mul_scalar(y_true, T(-1)), T(1));
  auto one_minus_p = ops::add_scalar(ops::mul_scalar(p, T(-1)), T(1));
  auto neg = ops::mul(one_minus_t, ops::log(one_minus_p));
  auto mean = ops::reduce_all(ops::Reduce::kMean, ops::add(pos, neg));
  return ops::mul_scalar(mean, T(-1));
}

template <typename T>
Var<T> total_loss(Var<T> y_pred, Var<T> y_true, const LossConfig& cfg) {
  cfg.validate();
  auto d = ops::mul_scalar(dice_loss(y_pred, y_true, static_cast<T>(cfg.epsilon)),
                           static_cast<T>(cfg.gamma));
  auto b = ops::mul_scalar(bce_loss(y_pred, y_true), static_cast<T>(cfg.delta));
  return ops::add(d, b);
}

template <typename T>
T dice_loss_value(const Tensor<T>& y_pred, const Tensor<T>& y_true, T eps) {
  Tape<T> tape;
  return dice_loss(tape.leaf(y_pred), tape.leaf(y_true), eps).val().item();
}

template <typename T>
T bce_loss_value(const Tensor<T>& y_pred, const Tensor<T>& y_true) {
  Tape<T> tape;
  return bce_loss(tape.leaf(y_pred), tape.leaf(y_true)).val().item();
}

template <typename T>
T total_loss_value(const Tensor<T>& y_pred, const Tensor<T>& y_true, const LossConfig& cfg) {
  Tape<T> tape;
  return total_loss(tape.leaf(y_pred), tape.leaf(y_true), cfg).val().item();
}

#define MNETSAT_INSTANTIATE_LOSS(T)                                              \
  template Var<T> dice_loss<T>(Var<T>, Var<T>, T);                               \
  template Var<T> bce_loss<T>(Var<T>, Var<T>);                                   \
  template Var<T> total_loss<T>(Var<T>, Var<T>, const LossConfig&);              \
  template T dice_loss_value<T>(const Tensor<T>&, const Tensor<T>&, T);          \
  template T bce_loss_value<T>(const Tensor<T>&, const Tensor<T>&);              \
  template T total_loss_value<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&);

MNETSAT_INSTANTIATE_LOSS(float)
MNETSAT_INSTANTIATE_LOSS(double)

}  // namespace mnetsat::train
