#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stainlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// Copies share storage, so a tensor handed to an op and later read back
/// through another handle sees the same values. `detach()` makes a deep copy.
/// The gradient buffer is allocated on first access and always has the same
/// shape as the data.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  /// Value of a one-element tensor.
  T item() const;

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);

  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  /// Gradient buffer; zero-initialised on first access. Gradients live in
  /// shared storage, so they stay writable through const handles (the tape
  /// accumulates into inputs it only reads).
  std::span<T> grad() const;
  void zero_grad();
  void drop_grad();

  /// Deep copy of the values; the copy does not require grad.
  BasicTensor detach() const;
  /// Same shape, new storage, values copied, grad tracking off.
  BasicTensor reshaped(Shape shape) const;

  bool is_same(const BasicTensor& other) const noexcept { return impl_ == other.impl_; }
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace stainlab
