#include "stainlab/model.hpp"

#include "stainlab/error.hpp"
#include "stainlab/ops.hpp"

namespace stainlab {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "BASELINE";
    case Variant::Stinv: return "STINV";
    case Variant::StinvCa: return "STINV_CA";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "BASELINE") return Variant::Baseline;
  if (s == "STINV") return Variant::Stinv;
  if (s == "STINV_CA") return Variant::StinvCa;
  fail(ErrorCode::ConfigInvalid, "unknown variant '" + s + "' (BASELINE, STINV, STINV_CA)");
}

void validate(const ModelConfig& cfg) {
  const auto& ch = cfg.encoder_channels;
  if (ch.empty()) fail(ErrorCode::ConfigInvalid, "model.encoder_channels must not be empty");
  for (std::size_t i = 0; i < ch.size(); ++i) {
    if (ch[i] == 0 || (i > 0 && ch[i] <= ch[i - 1])) {
      fail(ErrorCode::ConfigInvalid, "model.encoder_channels must be positive and strictly increasing");
    }
  }
  if (cfg.attach_stage < 1 || cfg.attach_stage > ch.size()) {
    fail(ErrorCode::ConfigInvalid, "model.attach_stage must lie in 1.." + std::to_string(ch.size()));
  }
  const std::size_t div = std::size_t{1} << (ch.size() - 1);
  if (cfg.input_size == 0 || cfg.input_size % div != 0) {
    fail(ErrorCode::ConfigInvalid, "model.input_size must be a positive multiple of " + std::to_string(div));
  }
  validate(cfg.branch);
  validate(cfg.grl);
}

std::size_t stage_side(const ModelConfig& cfg, std::size_t stage) { return cfg.input_size >> (stage - 1); }

template <typename T>
BasicSegModel<T> BasicSegModel<T>::build(const ModelConfig& cfg, Rng& rng) {
  validate(cfg);
  BasicSegModel m;
  m.cfg_ = cfg;
  auto& store = m.store_;
  auto block = [&](const std::string& name, std::size_t cin, std::size_t cout) {
    Block b;
    b.conv1 = BasicConv2d<T>::create(store, name + ".conv1", cin, cout, 3, 1, 1, rng);
    b.bn1 = BasicBatchNorm<T>::create(store, name + ".bn1", cout);
    b.conv2 = BasicConv2d<T>::create(store, name + ".conv2", cout, cout, 3, 1, 1, rng);
    b.bn2 = BasicBatchNorm<T>::create(store, name + ".bn2", cout);
    return b;
  };
  const auto& ch = cfg.encoder_channels;
  std::size_t cin = 3;
  for (std::size_t k = 0; k < ch.size(); ++k) {
    m.encoder_.push_back(block("enc" + std::to_string(k + 1), cin, ch[k]));
    cin = ch[k];
  }
  for (std::size_t k = 0; k + 1 < ch.size(); ++k) {
    m.decoder_.push_back(block("dec" + std::to_string(k + 1), ch[k + 1] + ch[k], ch[k]));
  }
  m.head_ = BasicConv2d<T>::create(store, "head", ch[0], 1, 1, 1, 0, rng);

  if (cfg.variant != Variant::Baseline) {
    const std::size_t c = ch[cfg.attach_stage - 1];
    const std::size_t side = stage_side(cfg, cfg.attach_stage);
    BranchConfig bc = cfg.branch;
    bc.target_spatial = std::min(bc.target_spatial, side);
    if (cfg.variant == Variant::StinvCa) m.attention_ = create_attention_head(store, "attention", c, rng);
    m.branch_ = BasicStainBranch<T>::create(store, "branch", c, side, bc, rng);
  }
  return m;
}

template <typename T>
BasicTensor<T> BasicSegModel<T>::run_block(BasicTape<T>& tape, Block& b, const BasicTensor<T>& x, bool training) {
  auto y = ops::relu(tape, b.bn1(tape, b.conv1(tape, x), training));
  return ops::relu(tape, b.bn2(tape, b.conv2(tape, y), training));
}

template <typename T>
std::vector<BasicTensor<T>> BasicSegModel<T>::encode(BasicTape<T>& tape, const BasicTensor<T>& images, bool training,
                                                     std::size_t upto) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.input_size || s[3] != cfg_.input_size) {
    fail(ErrorCode::ShapeMismatch, "model expects [N,3," + std::to_string(cfg_.input_size) + "," +
                                       std::to_string(cfg_.input_size) + "], got " + shape_str(s));
  }
  std::vector<BasicTensor<T>> feats;
  BasicTensor<T> x = images;
  for (std::size_t k = 0; k < upto; ++k) {
    if (k > 0) x = ops::maxpool2d(tape, x, 2, 2);
    x = run_block(tape, encoder_[k], x, training);
    feats.push_back(x);
  }
  return feats;
}

template <typename T>
BasicTensor<T> BasicSegModel<T>::decode(BasicTape<T>& tape, const std::vector<BasicTensor<T>>& skips, bool training) {
  BasicTensor<T> x = skips.back();
  for (std::size_t k = skips.size() - 1; k-- > 0;) {
    x = ops::concat_channels(tape, ops::upsample_nearest2x(tape, x), skips[k]);
    x = run_block(tape, decoder_[k], x, training);
  }
  return head_(tape, x);
}

template <typename T>
std::pair<BasicForwardOutputs<T>, BasicLosses<T>> BasicSegModel<T>::forward_train(BasicTape<T>& tape,
                                                                                  const BasicTrainBatch<T>& batch,
                                                                                  double alpha, double lambda,
                                                                                  Rng& rng) {
  if (cfg_.variant == Variant::StinvCa && !batch.augmented) {
    fail(ErrorCode::MissingAugmentation, "STINV_CA needs an augmented copy of every batch");
  }
  if (cfg_.variant != Variant::Baseline && !batch.stain_targets) {
    fail(ErrorCode::MissingStainTarget, std::string(to_string(cfg_.variant)) + " needs stain targets");
  }
  BasicForwardOutputs<T> out;
  out.stage_features = encode(tape, batch.images, true, cfg_.encoder_channels.size());
  out.logits = decode(tape, out.stage_features, true);
  if (batch.masks.shape() != out.logits.shape()) {
    fail(ErrorCode::ShapeMismatch, "mask batch " + shape_str(batch.masks.shape()) + " does not match logits " +
                                       shape_str(out.logits.shape()));
  }
  BasicLosses<T> losses;
  losses.task = cfg_.task_loss == TaskLoss::Bce ? ops::bce_with_logits(tape, out.logits, batch.masks)
                                                : ops::soft_dice_with_logits(tape, out.logits, batch.masks);
  if (cfg_.variant == Variant::Baseline) {
    losses.total = losses.task;
    return {std::move(out), std::move(losses)};
  }

  const BasicTensor<T>& f = out.stage_features[cfg_.attach_stage - 1];
  BasicTensor<T> branch_in = f;
  if (cfg_.variant == Variant::StinvCa) {
    const auto aug_feats = encode(tape, *batch.augmented, true, cfg_.attach_stage);
    const auto& fp = aug_feats.back();
    out.variance = variance_matrix(tape, covariance(tape, f, cfg_.centered_covariance),
                                   covariance(tape, fp, cfg_.centered_covariance));
    out.attention_weights = channel_weights(tape, *out.variance, *attention_);
    branch_in = reweigh(tape, f, *out.attention_weights);
  }
  out.s_hat = branch_->forward(tape, branch_in, lambda, true, rng);
  losses.stain = rmse_stain_loss(tape, *out.s_hat, *batch.stain_targets);
  losses.total = total_loss(tape, losses.task, *losses.stain, alpha);
  return {std::move(out), std::move(losses)};
}

template <typename T>
BasicTensor<T> BasicSegModel<T>::forward_eval(BasicTape<T>& tape, const BasicTensor<T>& images) {
  return decode(tape, encode(tape, images, false, cfg_.encoder_channels.size()), false);
}

template <typename T>
BasicTensor<T> BasicSegModel<T>::stage_features_eval(BasicTape<T>& tape, const BasicTensor<T>& images,
                                                     std::size_t stage) {
  if (stage < 1 || stage > encoder_.size()) fail(ErrorCode::ConfigInvalid, "stage out of range");
  return encode(tape, images, false, stage).back();
}

template <typename T>
BasicTensor<T> images_to_tensor(const std::vector<const RgbImage*>& images) {
  if (images.empty()) fail(ErrorCode::EmptySet, "empty image batch");
  const std::size_t w = images[0]->width, h = images[0]->height, hw = w * h;
  BasicTensor<T> out(Shape{images.size(), 3, h, w});
  auto v = out.data();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage& img = *images[n];
    if (img.width != w || img.height != h) fail(ErrorCode::ShapeMismatch, "images in a batch differ in size");
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < 3; ++c) v[(n * 3 + c) * hw + p] = static_cast<T>(img.data[3 * p + c]) / T{255};
  }
  return out;
}

template <typename T>
BasicTensor<T> masks_to_tensor(const std::vector<const BinaryMask*>& masks) {
  if (masks.empty()) fail(ErrorCode::EmptySet, "empty mask batch");
  const std::size_t w = masks[0]->width, h = masks[0]->height, hw = w * h;
  BasicTensor<T> out(Shape{masks.size(), 1, h, w});
  auto v = out.data();
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->width != w || masks[n]->height != h) fail(ErrorCode::ShapeMismatch, "masks in a batch differ in size");
    for (std::size_t p = 0; p < hw; ++p) v[n * hw + p] = masks[n]->data[p] ? T{1} : T{0};
  }
  return out;
}

template <typename T>
BinaryMask logits_to_mask(const BasicTensor<T>& logits, std::size_t n) {
  const Shape& s = logits.shape();
  if (s.size() != 4 || s[1] != 1 || n >= s[0]) fail(ErrorCode::ShapeMismatch, "logits must be [N,1,H,W]");
  BinaryMask m(s[3], s[2]);
  const std::size_t hw = s[2] * s[3];
  auto v = logits.data();
  for (std::size_t p = 0; p < hw; ++p) m.data[p] = v[n * hw + p] > T{0} ? 1 : 0;
  return m;
}

template class BasicSegModel<float>;
template class BasicSegModel<double>;

#define STAINLAB_INSTANTIATE_MODEL_IO(T)                                               \
  template BasicTensor<T> images_to_tensor(const std::vector<const RgbImage*>&);       \
  template BasicTensor<T> masks_to_tensor(const std::vector<const BinaryMask*>&);      \
  template BinaryMask logits_to_mask(const BasicTensor<T>&, std::size_t);

STAINLAB_INSTANTIATE_MODEL_IO(float)
STAINLAB_INSTANTIATE_MODEL_IO(double)

#undef STAINLAB_INSTANTIATE_MODEL_IO

}  // namespace stainlab
