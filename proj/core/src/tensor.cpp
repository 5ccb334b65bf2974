#include "cpn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cpn/error.hpp"

namespace cpn {

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {
  for (auto d : dims_)
    if (d == 0) throw ShapeError("shape dimensions must be positive");
}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (auto d : dims_)
    if (d == 0) throw ShapeError("shape dimensions must be positive");
}

std::size_t Shape::numel() const noexcept {
  if (dims_.empty()) return 0;
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != data_.size())
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor<T>(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cpn
