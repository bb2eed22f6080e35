#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "stainlab/attention.hpp"
#include "stainlab/branch.hpp"
#include "stainlab/image.hpp"
#include "stainlab/params.hpp"

namespace stainlab {

enum class Variant { Baseline, Stinv, StinvCa };

const char* to_string(Variant v);
/// Accepts BASELINE, STINV, STINV_CA.
Variant variant_from_string(const std::string& s);

enum class TaskLoss { Bce, Dice };

struct ModelConfig {
  Variant variant = Variant::Baseline;
  std::size_t attach_stage = 1;
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128, 256};
  std::size_t input_size = 96;
  BranchConfig branch;
  GrlConfig grl;
  bool centered_covariance = false;
  TaskLoss task_loss = TaskLoss::Bce;
};

/// Throws ConfigInvalid: attach_stage outside 1..depth, channels not strictly
/// increasing, or input_size not divisible by 2^(depth-1).
void validate(const ModelConfig& cfg);

/// Spatial side of encoder stage k (1-based) for the configured input size.
std::size_t stage_side(const ModelConfig& cfg, std::size_t stage);

template <typename T>
struct BasicForwardOutputs {
  BasicTensor<T> logits;                       // [N,1,H,W]
  std::vector<BasicTensor<T>> stage_features;  // post-activation output of every encoder stage
  std::optional<BasicTensor<T>> s_hat;         // [N,3,2]
  std::optional<BasicTensor<T>> attention_weights;  // [N,C]
  std::optional<BasicTensor<T>> variance;      // [N,C,C]
};

template <typename T>
struct BasicLosses {
  BasicTensor<T> task;
  std::optional<BasicTensor<T>> stain;
  BasicTensor<T> total;
};

template <typename T>
struct BasicTrainBatch {
  BasicTensor<T> images;                    // [N,3,H,W] in [0,1]
  BasicTensor<T> masks;                     // [N,1,H,W] in {0,1}
  std::optional<BasicTensor<T>> augmented;  // [N,3,H,W]
  std::optional<BasicTensor<T>> stain_targets;  // [N,3,2]
};

/// U-Net style encoder-decoder with an optional stain-adversarial branch.
///
/// Each encoder stage is conv-bn-relu x2; stages are separated by 2x2 max
/// pooling. The decoder upsamples, concatenates the matching skip and applies
/// conv-bn-relu x2. A 1x1 convolution produces one logit per pixel.
template <typename T>
class BasicSegModel {
 public:
  static BasicSegModel build(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  BasicParamStore<T>& params() { return store_; }
  const BasicParamStore<T>& params() const { return store_; }
  bool has_branch() const { return branch_.has_value(); }
  /// Turns the branch's GRL on or off (off makes every gradient the true
  /// derivative of the total loss, as needed by finite-difference checks).
  void set_gradient_reversal(bool on) {
    if (branch_) branch_->reverse_gradients = on;
  }

  /// Zeroes the stain head weights and sets its bias to `prior`, so the
  /// branch starts from a constant prediction. No-op without a branch.
  void init_stain_head(const StainMatrix& prior) {
    if (!branch_) return;
    for (auto& w : branch_->head.weight.data()) w = T(0);
    auto bias = branch_->head.bias.data();
    for (std::size_t k = 0; k < 6; ++k) bias[k] = static_cast<T>(prior.row_major()[k]);
  }

  /// Encoder outputs for stages 1..upto (post-activation, before pooling).
  std::vector<BasicTensor<T>> encode(BasicTape<T>& tape, const BasicTensor<T>& images, bool training,
                                     std::size_t upto);

  /// Training forward pass with losses. `lambda` is the GRL strength for
  /// this step. MissingAugmentation / MissingStainTarget per variant.
  std::pair<BasicForwardOutputs<T>, BasicLosses<T>> forward_train(BasicTape<T>& tape, const BasicTrainBatch<T>& batch,
                                                                  double alpha, double lambda, Rng& rng);

  /// Eval-mode segmentation logits; never touches the branch.
  BasicTensor<T> forward_eval(BasicTape<T>& tape, const BasicTensor<T>& images);

  /// Eval-mode features at the attachment stage (for covariance analysis).
  BasicTensor<T> stage_features_eval(BasicTape<T>& tape, const BasicTensor<T>& images, std::size_t stage);

 private:
  struct Block {
    BasicConv2d<T> conv1, conv2;
    BasicBatchNorm<T> bn1, bn2;
  };
  BasicTensor<T> run_block(BasicTape<T>& tape, Block& b, const BasicTensor<T>& x, bool training);
  BasicTensor<T> decode(BasicTape<T>& tape, const std::vector<BasicTensor<T>>& skips, bool training);

  ModelConfig cfg_;
  BasicParamStore<T> store_;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;  // decoder_[k] produces stage k+1 resolution
  BasicConv2d<T> head_;
  std::optional<BasicAttentionHead<T>> attention_;
  std::optional<BasicStainBranch<T>> branch_;
};

extern template class BasicSegModel<float>;
extern template class BasicSegModel<double>;

using SegModel = BasicSegModel<float>;

/// Packs images as [N,3,H,W] scaled to [0,1]; sizes must agree.
template <typename T>
BasicTensor<T> images_to_tensor(const std::vector<const RgbImage*>& images);
template <typename T>
BasicTensor<T> masks_to_tensor(const std::vector<const BinaryMask*>& masks);
/// Thresholds logits of sample `n` at zero.
template <typename T>
BinaryMask logits_to_mask(const BasicTensor<T>& logits, std::size_t n);

}  // namespace stainlab
