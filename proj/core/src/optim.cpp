#include "stainlab/optim.hpp"

#include <cmath>

#include "stainlab/error.hpp"

namespace stainlab {

template <typename T>
void BasicAdamW<T>::step(BasicParamStore<T>& params) {
  for (const auto& [name, e] : params.entries()) {
    if (!e.trainable || !e.tensor.has_grad()) continue;
    for (T g : e.tensor.grad()) {
      if (!std::isfinite(g)) fail(ErrorCode::NonFiniteValue, "non-finite gradient in '" + name + "'");
    }
  }
  ++steps_;
  const T lr = static_cast<T>(cfg_.lr);
  const T wd = static_cast<T>(cfg_.weight_decay);
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T eps = static_cast<T>(cfg_.eps);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_)));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_)));
  for (const auto& name : params.trainable_names()) {
    BasicTensor<T>& p = params.at(name);
    if (!p.has_grad()) continue;
    auto& mom = state_[name];
    if (mom.m.size() != p.numel()) {
      mom.m.assign(p.numel(), T{0});
      mom.v.assign(p.numel(), T{0});
    }
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * wd * w[i];
      mom.m[i] = b1 * mom.m[i] + (T{1} - b1) * g[i];
      mom.v[i] = b2 * mom.v[i] + (T{1} - b2) * g[i] * g[i];
      const T mhat = mom.m[i] / bc1;
      const T vhat = mom.v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template class BasicAdamW<float>;
template class BasicAdamW<double>;

}  // namespace stainlab
