#pragma once

#include <cstddef>

#include "stainlab/rng.hpp"
#include "stainlab/tape.hpp"
#include "stainlab/tensor.hpp"

// Differentiable primitives. Every function records its backward rule on the
// given tape when any input requires grad and the tape is recording.
namespace stainlab::ops {

template <typename T> using Ten = BasicTensor<T>;
template <typename T> using Tp = BasicTape<T>;

// Elementwise arithmetic. Binary ops require identical shapes.
template <typename T> Ten<T> add(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b);
template <typename T> Ten<T> sub(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b);
template <typename T> Ten<T> mul(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b);
template <typename T> Ten<T> scale(Tp<T>& tape, const Ten<T>& a, T factor);
template <typename T> Ten<T> square(Tp<T>& tape, const Ten<T>& a);
template <typename T> Ten<T> sqrt(Tp<T>& tape, const Ten<T>& a);

// Reductions to a one-element tensor of shape {}.
template <typename T> Ten<T> sum(Tp<T>& tape, const Ten<T>& a);
template <typename T> Ten<T> mean(Tp<T>& tape, const Ten<T>& a);

template <typename T> Ten<T> reshape(Tp<T>& tape, const Ten<T>& a, Shape shape);

template <typename T> Ten<T> relu(Tp<T>& tape, const Ten<T>& a);
template <typename T> Ten<T> sigmoid(Tp<T>& tape, const Ten<T>& a);
/// Inverted dropout: survivors scaled by 1/(1-p) in training, identity in eval.
template <typename T>
Ten<T> dropout(Tp<T>& tape, const Ten<T>& a, double p, bool training, Rng& rng);

/// Identity forward; backward multiplies the upstream gradient by -lambda.
template <typename T> Ten<T> gradient_reversal(Tp<T>& tape, const Ten<T>& a, double lambda);

/// Cross-correlation. x: [N,Cin,H,W], weight: [Cout,Cin,K,K], bias: [Cout].
template <typename T>
Ten<T> conv2d(Tp<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias,
              std::size_t stride, std::size_t padding);

/// Ties go to the first maximal element in row-major window order.
template <typename T>
Ten<T> maxpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t window, std::size_t stride);
template <typename T>
Ten<T> avgpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t window, std::size_t stride);
/// Pools [N,C,H,W] to [N,C,out,out] with variable windows
/// [floor(i*H/out), ceil((i+1)*H/out)).
template <typename T> Ten<T> adaptive_maxpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t out);
template <typename T> Ten<T> adaptive_avgpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t out);

template <typename T> Ten<T> upsample_nearest2x(Tp<T>& tape, const Ten<T>& x);
/// Concatenates two [N,*,H,W] tensors along the channel axis.
template <typename T> Ten<T> concat_channels(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b);

/// Batch normalisation over axis 1 of [N,C,H,W] or [N,C].
/// Training mode uses biased batch statistics for the output and folds the
/// unbiased variance into the running buffers; the running buffers never
/// receive gradients.
template <typename T>
Ten<T> batchnorm(Tp<T>& tape, const Ten<T>& x, const Ten<T>& gamma, const Ten<T>& beta,
                 Ten<T>& running_mean, Ten<T>& running_var, bool training, double eps,
                 double momentum);

/// x: [N,D], weight: [D,K], bias: [K] -> [N,K].
template <typename T>
Ten<T> dense(Tp<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias);

/// Mean binary cross-entropy between logits and {0,1} targets of equal shape.
template <typename T>
Ten<T> bce_with_logits(Tp<T>& tape, const Ten<T>& logits, const Ten<T>& targets);

/// 1 - (2 sum(p y) + smooth) / (sum(p) + sum(y) + smooth), p = sigmoid(logits),
/// pooled over every element.
template <typename T>
Ten<T> soft_dice_with_logits(Tp<T>& tape, const Ten<T>& logits, const Ten<T>& targets, double smooth = 1.0);

}  // namespace stainlab::ops
