#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnetsat/tensor.hpp"

namespace mnetsat {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; invalid when default-constructed.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& val() const;
  const Shape& shape() const { return val().shape(); }
  bool requires_grad() const;
};

/// Append-only record of executed ops; supports one reverse sweep from a
/// scalar root. Recording is single-threaded; values are immutable once added.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Var<T> leaf(Tensor<T> value) {
    return push(Node{std::move(value), "leaf", {}, nullptr, false}, true);
  }

  Var<T> record(const char* op, Tensor<T> value, std::vector<int32_t> parents,
                BackwardFn backward) {
    if (finite_checks_enabled() && !value.all_finite())
      throw std::runtime_error(std::string("non-finite values produced by op '") + op + "'");
    bool rg = false;
    for (int32_t p : parents) rg = rg || nodes_[static_cast<size_t>(p)].requires_grad;
    return push(Node{std::move(value), op, std::move(parents),
                     rg ? std::move(backward) : nullptr, rg},
                false);
  }

  const Tensor<T>& value(Var<T> v) const { return node(v).value; }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }

  /// Reverse sweep from a scalar root; gradients retrievable via grad().
  void backward(Var<T> root) {
    if (root.tape != this) throw std::invalid_argument("backward: root not on this tape");
    const Node& r = node(root);
    if (r.value.numel() != 1)
      throw std::invalid_argument("backward: root has shape " + shape_str(r.value.shape()) +
                                  ", expected a scalar");
    grads_.assign(nodes_.size(), Tensor<T>());
    seen_.assign(nodes_.size(), 0);
    accumulate(root.id, Tensor<T>::full(r.value.shape(), T(1)));
    for (int32_t i = root.id; i >= 0; --i) {
      const Node& n = nodes_[static_cast<size_t>(i)];
      if (seen_[static_cast<size_t>(i)] && n.backward) n.backward(*this, grads_[static_cast<size_t>(i)]);
    }
  }

  bool has_grad(Var<T> v) const {
    return v.tape == this && v.id >= 0 && static_cast<size_t>(v.id) < seen_.size() &&
           seen_[static_cast<size_t>(v.id)] != 0;
  }

  const Tensor<T>& grad(Var<T> v) const {
    if (!has_grad(v))
      throw std::invalid_argument("grad: no gradient recorded for this node");
    return grads_[static_cast<size_t>(v.id)];
  }

  /// Adds `g` into the gradient slot of node `id`. Called by backward fns.
  void accumulate(int32_t id, Tensor<T> g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
      throw std::logic_error(std::string("gradient shape ") + shape_str(g.shape()) +
                             " does not match value shape " + shape_str(n.value.shape()) +
                             " at op '" + n.op + "'");
    if (!seen_[static_cast<size_t>(id)]) {
      grads_[static_cast<size_t>(id)] = std::move(g);
      seen_[static_cast<size_t>(id)] = 1;
    } else {
      Tensor<T>& acc = grads_[static_cast<size_t>(id)];
      T* a = acc.data();
      const T* b = g.cdata();
      const int64_t m = acc.numel();
      for (int64_t i = 0; i < m; ++i) a[i] += b[i];
    }
  }

  size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
    seen_.clear();
  }

 private:
  struct Node {
    Tensor<T> value;
    const char* op;
    std::vector<int32_t> parents;
    BackwardFn backward;
    bool requires_grad;
  };

  Var<T> push(Node n, bool is_leaf) {
    if (is_leaf) n.requires_grad = n.value.requires_grad();
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int32_t>(nodes_.size()) - 1};
  }

  const Node& node(Var<T> v) const {
    if (v.tape != this || v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
      throw std::invalid_argument("var does not belong to this tape");
    return nodes_[static_cast<size_t>(v.id)];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<char> seen_;
};

template <typename T>
const Tensor<T>& Var<T>::val() const {
  return tape->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(*this);
}

}  // namespace mnetsat
