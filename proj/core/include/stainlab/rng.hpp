#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace stainlab {

/// Seeded generator threaded explicitly through every stochastic call.
/// There is no process-wide generator; two Rng objects with the same seed
/// produce identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; advances this generator by one draw.
  Rng split() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

  /// Textual engine state, used to persist training progress in checkpoints.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace stainlab
