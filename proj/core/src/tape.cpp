#include "stainlab/tape.hpp"

#include <cmath>

#include "stainlab/error.hpp"

namespace stainlab {

template <typename T>
bool BasicTape<T>::needs(std::initializer_list<const BasicTensor<T>*> inputs) const {
  if (!recording_) return false;
  for (const auto* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
bool BasicTape<T>::needs(const std::vector<BasicTensor<T>>& inputs) const {
  if (!recording_) return false;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

template <typename T>
void BasicTape<T>::record(BasicTensor<T>& output, BackwardFn backward) {
  output.set_requires_grad(true);
  records_.push_back(Record{output, std::move(backward)});
}

template <typename T>
void BasicTape<T>::backward(BasicTensor<T>& root) {
  if (root.numel() != 1) {
    fail(ErrorCode::ShapeMismatch, "backward root must hold one value, got " +
                                       shape_str(root.shape()));
  }
  if (!std::isfinite(root.item())) fail(ErrorCode::NonFiniteValue, "backward from non-finite root");
  root.grad()[0] += T{1};
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace stainlab
