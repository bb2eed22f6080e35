#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "stainlab/params.hpp"
#include "stainlab/tape.hpp"
#include "stainlab/tensor.hpp"

namespace stainlab {

/// Per-sample channel Gram matrix: F [N,C,H,W] -> (1/HW) F F^T, [N,C,C].
/// With `centered`, each channel's spatial mean is removed first.
template <typename T>
BasicTensor<T> covariance(BasicTape<T>& tape, const BasicTensor<T>& features, bool centered = false);

/// mu = (S + S')/2, V = ((S - mu)^2 + (S' - mu)^2)/2, elementwise.
template <typename T>
BasicTensor<T> variance_matrix(BasicTape<T>& tape, const BasicTensor<T>& sigma,
                               const BasicTensor<T>& sigma_prime);

/// Fully connected C -> 1 map applied to every row of V.
template <typename T>
using BasicAttentionHead = BasicDense<T>;

template <typename T>
BasicAttentionHead<T> create_attention_head(BasicParamStore<T>& store, const std::string& name,
                                            std::size_t channels, Rng& rng) {
  return BasicDense<T>::create(store, name, channels, 1, rng);
}

/// w[n,c] = sigmoid(V[n,c,:] . M + b), shape [N,C].
template <typename T>
BasicTensor<T> channel_weights(BasicTape<T>& tape, const BasicTensor<T>& variance,
                               const BasicAttentionHead<T>& head);

/// F[n,c,:,:] * w[n,c].
template <typename T>
BasicTensor<T> reweigh(BasicTape<T>& tape, const BasicTensor<T>& features, const BasicTensor<T>& weights);

/// Batch mean of a [N,C,C] tensor as a row-major C*C vector.
template <typename T>
std::vector<double> batch_mean_matrix(const BasicTensor<T>& m);

void write_matrix_csv(const std::filesystem::path& path, const std::vector<double>& m, std::size_t c);
/// Min-max scaled 8-bit heatmap; a constant matrix maps to black.
void write_matrix_heatmap(const std::filesystem::path& path, const std::vector<double>& m, std::size_t c);

}  // namespace stainlab
