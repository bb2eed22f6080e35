#include "stainlab/params.hpp"

#include <cmath>

#include "stainlab/error.hpp"

namespace stainlab {

template <typename T>
BasicTensor<T>& BasicParamStore<T>::add(const std::string& name, BasicTensor<T> tensor,
                                        bool trainable) {
  if (entries_.count(name)) fail(ErrorCode::ConfigInvalid, "duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(trainable);
  auto [it, _] = entries_.emplace(name, Entry{std::move(tensor), trainable});
  return it->second.tensor;
}

template <typename T>
BasicTensor<T>& BasicParamStore<T>::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::ConfigInvalid, "unknown parameter '" + name + "'");
  return it->second.tensor;
}

template <typename T>
const BasicTensor<T>& BasicParamStore<T>::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::ConfigInvalid, "unknown parameter '" + name + "'");
  return it->second.tensor;
}

template <typename T>
std::vector<std::string> BasicParamStore<T>::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

template <typename T>
std::vector<std::string> BasicParamStore<T>::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) {
    if (e.trainable) out.push_back(name);
  }
  return out;
}

template <typename T>
std::size_t BasicParamStore<T>::trainable_count() const {
  std::size_t total = 0;
  for (const auto& [_, e] : entries_) {
    if (e.trainable) total += e.tensor.numel();
  }
  return total;
}

template <typename T>
void BasicParamStore<T>::zero_grad() {
  for (auto& [_, e] : entries_) e.tensor.zero_grad();
}

template <typename T>
void BasicParamStore<T>::drop_grads() {
  for (auto& [_, e] : entries_) e.tensor.drop_grad();
}

template <typename T>
BasicTensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  BasicTensor<T> out(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& v : out.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template <typename T>
BasicConv2d<T> BasicConv2d<T>::create(BasicParamStore<T>& store, const std::string& name,
                                      std::size_t cin, std::size_t cout, std::size_t kernel,
                                      std::size_t stride, std::size_t padding, Rng& rng) {
  BasicConv2d conv;
  const std::size_t fan_in = cin * kernel * kernel;
  conv.weight = store.add(name + ".weight",
                          kaiming_uniform<T>(Shape{cout, cin, kernel, kernel}, fan_in, rng), true);
  conv.bias = store.add(name + ".bias", BasicTensor<T>(Shape{cout}), true);
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

template <typename T>
BasicBatchNorm<T> BasicBatchNorm<T>::create(BasicParamStore<T>& store, const std::string& name,
                                            std::size_t channels, double eps, double momentum) {
  BasicBatchNorm bn;
  bn.gamma = store.add(name + ".gamma", BasicTensor<T>(Shape{channels}, T{1}), true);
  bn.beta = store.add(name + ".beta", BasicTensor<T>(Shape{channels}), true);
  bn.running_mean = store.add(name + ".running_mean", BasicTensor<T>(Shape{channels}), false);
  bn.running_var = store.add(name + ".running_var", BasicTensor<T>(Shape{channels}, T{1}), false);
  bn.eps = eps;
  bn.momentum = momentum;
  return bn;
}

template <typename T>
BasicDense<T> BasicDense<T>::create(BasicParamStore<T>& store, const std::string& name,
                                    std::size_t in, std::size_t out, Rng& rng) {
  BasicDense d;
  d.weight = store.add(name + ".weight", kaiming_uniform<T>(Shape{in, out}, in, rng), true);
  d.bias = store.add(name + ".bias", BasicTensor<T>(Shape{out}), true);
  return d;
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;
template struct BasicConv2d<float>;
template struct BasicConv2d<double>;
template struct BasicBatchNorm<float>;
template struct BasicBatchNorm<double>;
template struct BasicDense<float>;
template struct BasicDense<double>;
template BasicTensor<float> kaiming_uniform<float>(Shape, std::size_t, Rng&);
template BasicTensor<double> kaiming_uniform<double>(Shape, std::size_t, Rng&);

}  // namespace stainlab
