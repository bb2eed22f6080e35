#include "stainlab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "stainlab/attention.hpp"
#include "stainlab/error.hpp"

namespace stainlab {

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

Counts count(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.data.size() != gt.data.size()) {
    fail(ErrorCode::ShapeMismatch, "masks differ in size");
  }
  Counts c;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  return c;
}

template <typename Fn>
void for_batches(std::size_t n, std::size_t batch, Fn&& fn) {
  batch = std::max<std::size_t>(batch, 1);
  for (std::size_t lo = 0; lo < n; lo += batch) fn(lo, std::min(n, lo + batch));
}

std::vector<const RgbImage*> slice(const std::vector<const RgbImage*>& v, std::size_t lo, std::size_t hi) {
  return {v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(hi)};
}

void check_pairs(const std::vector<const RgbImage*>& a, const std::vector<const RgbImage*>& b) {
  if (a.empty()) fail(ErrorCode::EmptySet, "feature divergence of an empty set");
  if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "paired sets differ in size");
}

// Adds the channel-averaged divergence of every pair in the batch to `acc`.
void accumulate_divergence(const Tensor& fa, const Tensor& fb, double& acc) {
  const ChannelMoments ma = channel_moments(fa), mb = channel_moments(fb);
  const std::size_t c = ma.channels, n = ma.mean.size() / c;
  for (std::size_t i = 0; i < n; ++i) {
    double per_image = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t j = i * c + k;
      per_image += sym_kl(ma.mean[j], ma.var[j], mb.mean[j], mb.var[j]);
    }
    acc += per_image / static_cast<double>(c);
  }
}

}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  const Counts c = count(pred, gt);
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

PrecisionRecall precision_recall(const BinaryMask& pred, const BinaryMask& gt) {
  const Counts c = count(pred, gt);
  const bool gt_empty = c.tp + c.fn == 0;
  PrecisionRecall pr;
  pr.precision = c.tp + c.fp == 0 ? (gt_empty ? 1.0 : 0.0)
                                  : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  pr.recall = gt_empty ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return pr;
}

double sym_kl(double mu_a, double var_a, double mu_b, double var_b) {
  if (!std::isfinite(mu_a) || !std::isfinite(var_a) || !std::isfinite(mu_b) || !std::isfinite(var_b)) {
    fail(ErrorCode::NonFiniteValue, "sym_kl: non-finite moments");
  }
  const double va = std::max(var_a, 1e-8), vb = std::max(var_b, 1e-8);
  const double d2 = (mu_a - mu_b) * (mu_a - mu_b);
  const double ab = 0.5 * std::log(vb / va) + (va + d2) / (2.0 * vb) - 0.5;
  const double ba = 0.5 * std::log(va / vb) + (vb + d2) / (2.0 * va) - 0.5;
  const double d = ab + ba;
  if (!std::isfinite(d)) fail(ErrorCode::NonFiniteValue, "sym_kl: non-finite divergence");
  return d;
}

template <typename T>
ChannelMoments channel_moments(const BasicTensor<T>& f) {
  const Shape& s = f.shape();
  if (s.size() != 4) fail(ErrorCode::ShapeMismatch, "channel moments need [N,C,H,W]");
  const std::size_t nc = s[0] * s[1], hw = s[2] * s[3];
  ChannelMoments m{s[1], std::vector<double>(nc), std::vector<double>(nc)};
  auto v = f.data();
  for (std::size_t k = 0; k < nc; ++k) {
    double mu = 0.0;
    for (std::size_t p = 0; p < hw; ++p) mu += static_cast<double>(v[k * hw + p]);
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      const double d = static_cast<double>(v[k * hw + p]) - mu;
      var += d * d;
    }
    m.mean[k] = mu;
    m.var[k] = var / static_cast<double>(hw);
  }
  return m;
}

double feature_divergence(SegModel& model, const std::vector<const RgbImage*>& a,
                          const std::vector<const RgbImage*>& b, std::size_t stage, std::size_t batch) {
  check_pairs(a, b);
  double acc = 0.0;
  Tape tape(false);
  for_batches(a.size(), batch, [&](std::size_t lo, std::size_t hi) {
    const Tensor fa = model.stage_features_eval(tape, images_to_tensor<float>(slice(a, lo, hi)), stage);
    const Tensor fb = model.stage_features_eval(tape, images_to_tensor<float>(slice(b, lo, hi)), stage);
    accumulate_divergence(fa, fb, acc);
  });
  return acc / static_cast<double>(a.size());
}

std::vector<double> feature_divergence_all_stages(SegModel& model, const std::vector<const RgbImage*>& a,
                                                  const std::vector<const RgbImage*>& b, std::size_t batch) {
  check_pairs(a, b);
  const std::size_t depth = model.config().encoder_channels.size();
  std::vector<double> acc(depth, 0.0);
  Tape tape(false);
  for_batches(a.size(), batch, [&](std::size_t lo, std::size_t hi) {
    const auto fa = model.encode(tape, images_to_tensor<float>(slice(a, lo, hi)), false, depth);
    const auto fb = model.encode(tape, images_to_tensor<float>(slice(b, lo, hi)), false, depth);
    for (std::size_t s = 0; s < depth; ++s) accumulate_divergence(fa[s], fb[s], acc[s]);
  });
  for (double& v : acc) v /= static_cast<double>(a.size());
  return acc;
}

MeanMatrices mean_matrices(SegModel& model, const std::vector<const RgbImage*>& images,
                           const std::vector<const RgbImage*>& augmented, std::size_t stage, bool centered,
                           std::size_t batch) {
  check_pairs(images, augmented);
  MeanMatrices out;
  out.channels = model.config().encoder_channels.at(stage - 1);
  const std::size_t cc = out.channels * out.channels;
  out.covariance.assign(cc, 0.0);
  out.variance.assign(cc, 0.0);
  Tape tape(false);
  for_batches(images.size(), batch, [&](std::size_t lo, std::size_t hi) {
    const Tensor s = covariance(tape, model.stage_features_eval(tape, images_to_tensor<float>(slice(images, lo, hi)), stage),
                                centered);
    const Tensor sp = covariance(
        tape, model.stage_features_eval(tape, images_to_tensor<float>(slice(augmented, lo, hi)), stage), centered);
    const Tensor v = variance_matrix(tape, s, sp);
    const double w = static_cast<double>(hi - lo);
    const auto ms = batch_mean_matrix(s), mv = batch_mean_matrix(v);
    for (std::size_t i = 0; i < cc; ++i) {
      out.covariance[i] += w * ms[i];
      out.variance[i] += w * mv[i];
    }
  });
  for (std::size_t i = 0; i < cc; ++i) {
    out.covariance[i] /= static_cast<double>(images.size());
    out.variance[i] /= static_cast<double>(images.size());
  }
  return out;
}

SegMetrics evaluate_segmentation(SegModel& model, const std::vector<const RgbImage*>& images,
                                 const std::vector<const BinaryMask*>& masks, std::size_t batch) {
  if (images.empty()) fail(ErrorCode::EmptySet, "evaluation set is empty");
  if (images.size() != masks.size()) fail(ErrorCode::ShapeMismatch, "image and mask counts differ");
  SegMetrics m;
  Tape tape(false);
  for_batches(images.size(), batch, [&](std::size_t lo, std::size_t hi) {
    const Tensor logits = model.forward_eval(tape, images_to_tensor<float>(slice(images, lo, hi)));
    for (std::size_t i = lo; i < hi; ++i) {
      const BinaryMask pred = logits_to_mask(logits, i - lo);
      const auto pr = precision_recall(pred, *masks[i]);
      m.dice += dice(pred, *masks[i]);
      m.precision += pr.precision;
      m.recall += pr.recall;
    }
  });
  m.count = images.size();
  const double n = static_cast<double>(m.count);
  m.dice /= n;
  m.precision /= n;
  m.recall /= n;
  return m;
}

template ChannelMoments channel_moments(const BasicTensor<float>&);
template ChannelMoments channel_moments(const BasicTensor<double>&);

}  // namespace stainlab
