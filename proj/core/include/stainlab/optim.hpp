#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stainlab/params.hpp"

namespace stainlab {

struct AdamWConfig {
  double lr = 5e-5;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
/// name and persist across steps (and through checkpoints).
template <typename T>
class BasicAdamW {
 public:
  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };

  explicit BasicAdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update to every trainable parameter using its current grad.
  /// Throws NonFiniteValue, leaving parameters untouched, if any gradient is
  /// not finite.
  void step(BasicParamStore<T>& params);

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  const std::map<std::string, Moments>& state() const { return state_; }
  std::map<std::string, Moments>& state() { return state_; }

 private:
  AdamWConfig cfg_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

using AdamW = BasicAdamW<float>;

extern template class BasicAdamW<float>;
extern template class BasicAdamW<double>;

}  // namespace stainlab
