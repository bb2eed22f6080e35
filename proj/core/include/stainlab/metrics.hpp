#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stainlab/image.hpp"
#include "stainlab/model.hpp"

namespace stainlab {

/// 2|A n B| / (|A| + |B|); two empty masks score 1.
double dice(const BinaryMask& pred, const BinaryMask& gt);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// TP/(TP+FP), TP/(TP+FN). An empty denominator scores 1 when the ground
/// truth has no positives and 0 otherwise.
PrecisionRecall precision_recall(const BinaryMask& pred, const BinaryMask& gt);

/// Symmetric Gaussian KL: KL(a||b) + KL(b||a) with
/// KL(a||b) = log(sd_b/sd_a) + (var_a + (mu_a - mu_b)^2) / (2 var_b) - 1/2,
/// variances floored at 1e-8. Throws NonFiniteValue on non-finite input.
double sym_kl(double mu_a, double var_a, double mu_b, double var_b);

/// Per-image spatial mean and (population) variance of every channel of
/// stage features [N,C,H,W].
struct ChannelMoments {
  std::size_t channels = 0;
  std::vector<double> mean;  // [N*C]
  std::vector<double> var;   // [N*C]
};
template <typename T>
ChannelMoments channel_moments(const BasicTensor<T>& features);

/// Mean over image pairs of the channel-averaged sym_kl between stage
/// features of set_a[i] and set_b[i] (eval mode). EmptySet on empty input,
/// ShapeMismatch when the sets differ in size.
double feature_divergence(SegModel& model, const std::vector<const RgbImage*>& set_a,
                          const std::vector<const RgbImage*>& set_b, std::size_t stage,
                          std::size_t batch = 8);

/// Divergence for every encoder stage in one pass.
std::vector<double> feature_divergence_all_stages(SegModel& model, const std::vector<const RgbImage*>& set_a,
                                                  const std::vector<const RgbImage*>& set_b, std::size_t batch = 8);

struct MeanMatrices {
  std::size_t channels = 0;
  std::vector<double> covariance;  // row-major C*C
  std::vector<double> variance;
};

/// Average per-image covariance of `images` and variance matrix against
/// `augmented` at encoder `stage` (eval mode).
MeanMatrices mean_matrices(SegModel& model, const std::vector<const RgbImage*>& images,
                           const std::vector<const RgbImage*>& augmented, std::size_t stage,
                           bool centered = false, std::size_t batch = 8);

struct SegMetrics {
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t count = 0;
};

/// Per-image metrics of eval-mode predictions, averaged over the set.
SegMetrics evaluate_segmentation(SegModel& model, const std::vector<const RgbImage*>& images,
                                 const std::vector<const BinaryMask*>& masks, std::size_t batch = 8);

}  // namespace stainlab
