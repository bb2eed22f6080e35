#pragma once

#include <array>
#include <span>
#include <vector>

namespace stainlab {

/// Eigenpairs of a symmetric 3x3 matrix, eigenvalues sorted descending.
/// vectors[k] is the unit eigenvector of values[k].
struct SymEigen3 {
  std::array<double, 3> values{};
  std::array<std::array<double, 3>, 3> vectors{};
};

/// Cyclic Jacobi rotations on a row-major symmetric 3x3 matrix.
SymEigen3 eigen_symmetric3(const std::array<double, 9>& a);

/// Linear-interpolation percentile (same convention as numpy's default):
/// rank = pct/100 * (n-1). Sorts a copy; `values` must be non-empty.
double percentile(std::vector<double> values, double pct);

double mean_of(std::span<const double> values);
/// Sample standard deviation (n-1); zero for fewer than two values.
double stddev_of(std::span<const double> values);
double median_of(std::vector<double> values);

}  // namespace stainlab
