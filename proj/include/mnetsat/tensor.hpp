#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mnetsat {

// Extents of a dense array, outermost first. Feature maps are N x H x W x C.
using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// When on, every recorded op validates that its output is finite and throws
// otherwise. Defaults to on in debug builds, off in release.
bool finite_checks_enabled();
void set_finite_checks(bool on);

/// Dense tensor of rank 0..4 with shared, copy-on-write storage.
template <typename T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {
    check_rank();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(data))) {
    check_rank();
    if (static_cast<int64_t>(data_->size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(data_->size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  static Tensor ones_like(const Tensor& other) { return full(other.shape(), T(1)); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int64_t numel() const { return static_cast<int64_t>(data_->size()); }

  const T* cdata() const { return data_->data(); }

  // Mutable access; clones the buffer first if it is shared.
  T* data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
    return data_->data();
  }

  T item() const {
    if (numel() != 1)
      throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  T at(std::initializer_list<int64_t> idx) const { return (*data_)[offset(idx)]; }
  T& mut_at(std::initializer_list<int64_t> idx) { return *(data() + offset(idx)); }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    return *this;
  }

  bool all_finite() const {
    for (const T& v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->size());
    for (size_t i = 0; i < data_->size(); ++i) out[i] = static_cast<U>((*data_)[i]);
    Tensor<U> t(shape_, std::move(out));
    t.set_requires_grad(requires_grad_);
    return t;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " +
                                  shape_str(shape) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

 private:
  void check_rank() const {
    if (shape_.size() > 4)
      throw std::invalid_argument("tensor rank " + std::to_string(shape_.size()) +
                                  " exceeds 4");
    for (int64_t d : shape_)
      if (d < 0) throw std::invalid_argument("negative extent in " + shape_str(shape_));
  }

  int64_t offset(std::initializer_list<int64_t> idx) const {
    if (idx.size() != shape_.size())
      throw std::invalid_argument("index rank mismatch");
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
      off = off * shape_[k] + i;
      ++k;
    }
    return off;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  bool requires_grad_ = false;
};

// True when `from` may be broadcast to `to`: equal rank with each extent
// matching or 1, or a scalar.
bool broadcastable_to(const Shape& from, const Shape& to);

}  // namespace mnetsat
