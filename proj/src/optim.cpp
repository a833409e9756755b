#include "mnetsat/optim.hpp"

#include <cmath>
#include <limits>

namespace mnetsat::train {

template <typename T>
void Adam<T>::step(ParamBundle<T>& params,
                   const std::function<const Tensor<T>*(const std::string&)>& grad_of, T lr) {
  ++t_;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
  for (const std::string& name : params.names()) {
    Tensor<T>& p = params.at(name);
    const Tensor<T>* g = grad_of(name);
    if (g && g->shape() != p.shape())
      throw std::invalid_argument("adam: gradient shape " + shape_str(g->shape()) +
                                  " does not match parameter '" + name + "' " +
                                  shape_str(p.shape()));
    auto it = slots_.find(name);
    if (it == slots_.end())
      it = slots_.emplace(name, Slot{Tensor<T>(p.shape()), Tensor<T>(p.shape())}).first;
    Slot& s = it->second;
    T* pm = s.m.data();
    T* pv = s.v.data();
    T* pp = p.data();
    const T* pg = g ? g->cdata() : nullptr;
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      const T gi = pg ? pg[i] : T(0);
      pm[i] = beta1_ * pm[i] + (T(1) - beta1_) * gi;
      pv[i] = beta2_ * pv[i] + (T(1) - beta2_) * gi * gi;
      const T mhat = pm[i] / bc1;
      const T vhat = pv[i] / bc2;
      pp[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

void PlateauConfig::validate() const {
  if (factor <= 0 || factor >= 1) throw std::invalid_argument("plateau factor must be in (0,1)");
  if (patience < 1) throw std::invalid_argument("plateau patience must be >= 1");
  if (min_lr < 0) throw std::invalid_argument("plateau min_lr must be >= 0");
}

PlateauScheduler::PlateauScheduler(double initial_lr, PlateauConfig cfg)
    : cfg_(cfg), lr_(initial_lr), best_(-std::numeric_limits<double>::infinity()) {
  cfg_.validate();
}

double PlateauScheduler::observe(double metric) {
  if (!seen_ || metric > best_ + cfg_.min_improvement) {
    best_ = std::max(best_, metric);
    seen_ = true;
    stale_ = 0;
    return lr_;
  }
  if (++stale_ >= cfg_.patience) {
    lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
    stale_ = 0;
  }
  return lr_;
}

}  // namespace mnetsat::train
