#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "stainlab/ops.hpp"
#include "stainlab/rng.hpp"
#include "stainlab/tensor.hpp"

namespace stainlab {

/// Named parameter registry of a model. Trainable entries take part in
/// gradient updates; buffers (batch-norm running statistics) do not.
template <typename T>
class BasicParamStore {
 public:
  struct Entry {
    BasicTensor<T> tensor;
    bool trainable;
  };

  /// Registers a tensor under a unique name. Duplicate names are a
  /// ConfigInvalid error.
  BasicTensor<T>& add(const std::string& name, BasicTensor<T> tensor, bool trainable);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  BasicTensor<T>& at(const std::string& name);
  const BasicTensor<T>& at(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t trainable_count() const;

  void zero_grad();
  void drop_grads();

 private:
  std::map<std::string, Entry> entries_;
};

using ParamStore = BasicParamStore<float>;

/// Kaiming-uniform fan-in initialisation: U(-b, b), b = sqrt(6 / fan_in).
template <typename T>
BasicTensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
struct BasicConv2d {
  BasicTensor<T> weight;  // [Cout, Cin, K, K]
  BasicTensor<T> bias;    // [Cout]
  std::size_t stride = 1;
  std::size_t padding = 0;

  static BasicConv2d create(BasicParamStore<T>& store, const std::string& name, std::size_t cin,
                            std::size_t cout, std::size_t kernel, std::size_t stride,
                            std::size_t padding, Rng& rng);
  BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
    return ops::conv2d(tape, x, weight, bias, stride, padding);
  }
};

template <typename T>
struct BasicBatchNorm {
  BasicTensor<T> gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BasicBatchNorm create(BasicParamStore<T>& store, const std::string& name,
                               std::size_t channels, double eps = 1e-5, double momentum = 0.1);
  BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x, bool training) {
    return ops::batchnorm(tape, x, gamma, beta, running_mean, running_var, training, eps, momentum);
  }
};

template <typename T>
struct BasicDense {
  BasicTensor<T> weight;  // [D, K]
  BasicTensor<T> bias;    // [K]

  static BasicDense create(BasicParamStore<T>& store, const std::string& name, std::size_t in,
                           std::size_t out, Rng& rng);
  BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
    return ops::dense(tape, x, weight, bias);
  }
};

extern template class BasicParamStore<float>;
extern template class BasicParamStore<double>;
extern template struct BasicConv2d<float>;
extern template struct BasicConv2d<double>;
extern template struct BasicBatchNorm<float>;
extern template struct BasicBatchNorm<double>;
extern template struct BasicDense<float>;
extern template struct BasicDense<double>;

}  // namespace stainlab
