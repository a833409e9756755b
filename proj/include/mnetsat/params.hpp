#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mnetsat/tape.hpp"
#include "mnetsat/tensor.hpp"

namespace mnetsat {

/// Named parameter tensors in stable insertion order (checkpoint order).
template <typename T>
class ParamBundle {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (tensors_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    order_.push_back(name);
    return tensors_.emplace(name, std::move(t)).first->second;
  }

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& name : order_) n += tensors_.at(name).numel();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<T>> tensors_;
};

/// Tape leaves for the current step, keyed by parameter name.
template <typename T>
class VarMap {
 public:
  void put(const std::string& name, Var<T> v) { vars_[name] = v; }

  Var<T> operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::invalid_argument("no bound var for parameter '" + name + "'");
    return it->second;
  }

  const std::unordered_map<std::string, Var<T>>& all() const { return vars_; }

 private:
  std::unordered_map<std::string, Var<T>> vars_;
};

}  // namespace mnetsat
