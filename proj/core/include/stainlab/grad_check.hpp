#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "stainlab/error.hpp"
#include "stainlab/tape.hpp"
#include "stainlab/tensor.hpp"

namespace stainlab {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Relative error used by the gradient checker:
/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is zero from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of a scalar function with central finite
/// differences, coordinate by coordinate, for every tensor in `wrt`.
///
/// `f` must rebuild its graph on the tape it is given and return the scalar
/// loss; it must be deterministic (reseed any dropout generator inside `f`).
/// Throws NonFiniteValue when the loss or a gradient is not finite.
template <typename T>
GradCheckResult grad_check(const std::function<BasicTensor<T>(BasicTape<T>&)>& f,
                           std::vector<BasicTensor<T>> wrt, double eps,
                           double floor = 1e-6) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<T>> analytic;
  {
    BasicTape<T> tape;
    BasicTensor<T> loss = f(tape);
    if (!loss.all_finite()) fail(ErrorCode::NonFiniteValue, "grad_check: non-finite loss");
    tape.backward(loss);
    for (auto& t : wrt) {
      auto g = t.grad();
      for (T v : g) {
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "grad_check: non-finite gradient");
      }
      analytic.emplace_back(g.begin(), g.end());
    }
  }
  auto eval = [&]() {
    BasicTape<T> tape(false);
    BasicTensor<T> loss = f(tape);
    const double v = static_cast<double>(loss.item());
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "grad_check: non-finite loss");
    return v;
  };
  GradCheckResult result;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto values = wrt[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = static_cast<T>(saved + eps);
      const double up = eval();
      values[i] = static_cast<T>(saved - eps);
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = static_cast<double>(analytic[k][i]);
      const double err = relative_error(a, numeric, floor);
      if (err > result.max_relative_error) {
        result = {err, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace stainlab
