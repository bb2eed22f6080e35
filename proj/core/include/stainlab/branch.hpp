#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "stainlab/params.hpp"
#include "stainlab/stain.hpp"

namespace stainlab {

struct GrlConfig {
  double lambda = 1.0;
  /// Linear ramp from 0 to `lambda` over this many steps; 0 disables it.
  std::size_t warmup_steps = 0;

  double lambda_at(std::size_t step) const;
};

enum class DownsampleMode { Max, Avg, SConv };

const char* to_string(DownsampleMode m);
DownsampleMode downsample_mode_from_string(const std::string& s);

struct BranchConfig {
  DownsampleMode downsample_mode = DownsampleMode::Max;
  std::size_t target_spatial = 8;
  std::size_t embed_dim = 128;
  double dropout_p = 0.5;
};

/// Throws ConfigInvalid.
void validate(const GrlConfig& cfg);
void validate(const BranchConfig& cfg);

/// Stain-regression branch:
/// downsample -> GRL -> flatten -> dense -> batchnorm -> relu -> dropout -> dense(6) -> [N,3,2].
///
/// SCONV downsampling is two 3x3 conv+relu blocks (stride 2 while the side
/// stays >= target_spatial, else stride 1) followed by adaptive average pooling.
template <typename T>
struct BasicStainBranch {
  BranchConfig cfg;
  std::vector<BasicConv2d<T>> sconv;
  BasicDense<T> embed;
  BasicBatchNorm<T> norm;
  BasicDense<T> head;
  std::size_t channels = 0;
  /// False drops the GRL, turning the branch into a plain stain predictor.
  bool reverse_gradients = true;

  static BasicStainBranch create(BasicParamStore<T>& store, const std::string& name, std::size_t channels,
                                 std::size_t input_side, const BranchConfig& cfg, Rng& rng);

  /// `lambda` is the reversal strength for this step.
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& features, double lambda, bool training,
                         Rng& rng);
};

extern template struct BasicStainBranch<float>;
extern template struct BasicStainBranch<double>;

/// sqrt(mean((S - S_hat)^2)) over all N*6 elements jointly.
template <typename T>
BasicTensor<T> rmse_stain_loss(BasicTape<T>& tape, const BasicTensor<T>& s_hat, const BasicTensor<T>& s);

/// task + alpha * stain.
template <typename T>
BasicTensor<T> total_loss(BasicTape<T>& tape, const BasicTensor<T>& task, const BasicTensor<T>& stain,
                          double alpha);

/// Packs matrices into a [N,3,2] tensor (row = colour channel, column = stain).
template <typename T>
BasicTensor<T> stain_targets(const std::vector<StainMatrix>& matrices);

}  // namespace stainlab
