#include "stainlab/branch.hpp"

#include <algorithm>

#include "stainlab/error.hpp"
#include "stainlab/ops.hpp"

namespace stainlab {

double GrlConfig::lambda_at(std::size_t step) const {
  if (warmup_steps == 0 || step >= warmup_steps) return lambda;
  return lambda * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

const char* to_string(DownsampleMode m) {
  switch (m) {
    case DownsampleMode::Max: return "MAX";
    case DownsampleMode::Avg: return "AVG";
    case DownsampleMode::SConv: return "SCONV";
  }
  return "?";
}

DownsampleMode downsample_mode_from_string(const std::string& s) {
  if (s == "MAX") return DownsampleMode::Max;
  if (s == "AVG") return DownsampleMode::Avg;
  if (s == "SCONV") return DownsampleMode::SConv;
  fail(ErrorCode::ConfigInvalid, "unknown downsample mode '" + s + "' (MAX, AVG, SCONV)");
}

void validate(const GrlConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) fail(ErrorCode::ConfigInvalid, "grl.lambda must be >= 0");
}

void validate(const BranchConfig& cfg) {
  if (cfg.target_spatial < 1) fail(ErrorCode::ConfigInvalid, "branch.target_spatial must be >= 1");
  if (cfg.embed_dim < 1) fail(ErrorCode::ConfigInvalid, "branch.embed_dim must be >= 1");
  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) {
    fail(ErrorCode::ConfigInvalid, "branch.dropout_p must lie in [0,1)");
  }
}

template <typename T>
BasicStainBranch<T> BasicStainBranch<T>::create(BasicParamStore<T>& store, const std::string& name,
                                                std::size_t channels, std::size_t input_side,
                                                const BranchConfig& cfg, Rng& rng) {
  validate(cfg);
  if (input_side < cfg.target_spatial) {
    fail(ErrorCode::ShapeMismatch, "branch input side " + std::to_string(input_side) + " is below target_spatial " +
                                       std::to_string(cfg.target_spatial));
  }
  BasicStainBranch b;
  b.cfg = cfg;
  b.channels = channels;
  if (cfg.downsample_mode == DownsampleMode::SConv) {
    std::size_t side = input_side;
    for (int i = 0; i < 2; ++i) {
      const std::size_t next = (side + 1) / 2;
      const std::size_t stride = next >= cfg.target_spatial ? 2 : 1;
      if (stride == 2) side = next;
      b.sconv.push_back(BasicConv2d<T>::create(store, name + ".sconv" + std::to_string(i), channels, channels, 3,
                                               stride, 1, rng));
    }
  }
  const std::size_t flat = channels * cfg.target_spatial * cfg.target_spatial;
  b.embed = BasicDense<T>::create(store, name + ".embed", flat, cfg.embed_dim, rng);
  b.norm = BasicBatchNorm<T>::create(store, name + ".bn", cfg.embed_dim);
  b.head = BasicDense<T>::create(store, name + ".head", cfg.embed_dim, 6, rng);
  return b;
}

template <typename T>
BasicTensor<T> BasicStainBranch<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& f, double lambda,
                                            bool training, Rng& rng) {
  const Shape& s = f.shape();
  if (s.size() != 4 || s[1] != channels) {
    fail(ErrorCode::ShapeMismatch, "branch expects [N," + std::to_string(channels) + ",H,W], got " + shape_str(s));
  }
  if (s[2] < cfg.target_spatial || s[3] < cfg.target_spatial) {
    fail(ErrorCode::ShapeMismatch, "branch input " + shape_str(s) + " is smaller than target_spatial");
  }
  const std::size_t n = s[0], t = cfg.target_spatial;
  BasicTensor<T> x;
  switch (cfg.downsample_mode) {
    case DownsampleMode::Max: x = ops::adaptive_maxpool2d(tape, f, t); break;
    case DownsampleMode::Avg: x = ops::adaptive_avgpool2d(tape, f, t); break;
    case DownsampleMode::SConv: {
      x = f;
      for (const auto& conv : sconv) x = ops::relu(tape, conv(tape, x));
      x = ops::adaptive_avgpool2d(tape, x, t);
      break;
    }
  }
  if (reverse_gradients) x = ops::gradient_reversal(tape, x, lambda);
  x = ops::reshape(tape, x, Shape{n, channels * t * t});
  x = ops::relu(tape, norm(tape, embed(tape, x), training));
  x = ops::dropout(tape, x, cfg.dropout_p, training, rng);
  return ops::reshape(tape, head(tape, x), Shape{n, 3, 2});
}

template <typename T>
BasicTensor<T> rmse_stain_loss(BasicTape<T>& tape, const BasicTensor<T>& s_hat, const BasicTensor<T>& s) {
  if (s_hat.shape() != s.shape() || s.shape().size() != 3 || s.shape()[1] != 3 || s.shape()[2] != 2) {
    fail(ErrorCode::ShapeMismatch, "stain loss expects two [N,3,2] tensors, got " + shape_str(s_hat.shape()) +
                                       " and " + shape_str(s.shape()));
  }
  return ops::sqrt(tape, ops::mean(tape, ops::square(tape, ops::sub(tape, s_hat, s))));
}

template <typename T>
BasicTensor<T> total_loss(BasicTape<T>& tape, const BasicTensor<T>& task, const BasicTensor<T>& stain,
                          double alpha) {
  return ops::add(tape, task, ops::scale(tape, stain, static_cast<T>(alpha)));
}

template <typename T>
BasicTensor<T> stain_targets(const std::vector<StainMatrix>& matrices) {
  BasicTensor<T> out(Shape{matrices.size(), 3, 2});
  auto v = out.data();
  for (std::size_t i = 0; i < matrices.size(); ++i)
    for (std::size_t k = 0; k < 6; ++k) v[i * 6 + k] = static_cast<T>(matrices[i].row_major()[k]);
  return out;
}

template struct BasicStainBranch<float>;
template struct BasicStainBranch<double>;

#define STAINLAB_INSTANTIATE_BRANCH(T)                                                              \
  template BasicTensor<T> rmse_stain_loss(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> total_loss(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&, double); \
  template BasicTensor<T> stain_targets(const std::vector<StainMatrix>&);

STAINLAB_INSTANTIATE_BRANCH(float)
STAINLAB_INSTANTIATE_BRANCH(double)

#undef STAINLAB_INSTANTIATE_BRANCH

}  // namespace stainlab
