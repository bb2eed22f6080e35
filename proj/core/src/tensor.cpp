#include "stainlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "stainlab/error.hpp"

namespace stainlab {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorCode::ShapeMismatch, "shape " + shape_str(shape) + " does not hold " +
                                       std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  static const Shape empty;
  return impl_ ? impl_->shape : empty;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    fail(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " +
                                       shape_str(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
std::size_t BasicTensor<T>::numel() const {
  return impl_ ? impl_->data.size() : 0;
}

template <typename T>
std::span<T> BasicTensor<T>::data() {
  if (!impl_) return {};
  return impl_->data;
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  if (!impl_) return {};
  return impl_->data;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) fail(ErrorCode::ShapeMismatch, "item() on " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> BasicTensor<T>::grad() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T{0});
  return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
void BasicTensor<T>::drop_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  if (!impl_) return {};
  return BasicTensor(impl_->shape, impl_->data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor(std::move(shape), impl_->data);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  if (!impl_) return true;
  return std::all_of(impl_->data.begin(), impl_->data.end(),
                     [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace stainlab
