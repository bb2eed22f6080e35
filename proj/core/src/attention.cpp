#include "stainlab/attention.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "stainlab/error.hpp"
#include "stainlab/image.hpp"
#include "stainlab/ops.hpp"

namespace stainlab {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.shape().size() != rank) {
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": unexpected shape " + shape_str(t.shape()));
  }
}

// Plain loops keep the result independent of buffer alignment.
template <typename M>
void remove_row_means(M&& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    typename std::decay_t<M>::Scalar acc{0};
    for (Eigen::Index c = 0; c < m.cols(); ++c) acc += m(r, c);
    acc /= static_cast<typename std::decay_t<M>::Scalar>(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) -= acc;
  }
}

}  // namespace

template <typename T>
BasicTensor<T> covariance(BasicTape<T>& tape, const BasicTensor<T>& f, bool centered) {
  require_rank(f, 4, "covariance");
  const std::size_t n = f.shape()[0], c = f.shape()[1], hw = f.shape()[2] * f.shape()[3];
  if (hw == 0 || c == 0) fail(ErrorCode::ShapeMismatch, "covariance: empty feature map");
  const T inv = T{1} / static_cast<T>(hw);
  BasicTensor<T> out(Shape{n, c, c});
  // Keep the (possibly centred) features for the backward pass.
  std::vector<T> work(f.data().begin(), f.data().end());
  for (std::size_t b = 0; b < n; ++b) {
    Eigen::Map<RowMat<T>> fm(work.data() + b * c * hw, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(hw));
    if (centered) remove_row_means(fm);
    Eigen::Map<RowMat<T>> om(out.data().data() + b * c * c, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
    om.noalias() = inv * fm * fm.transpose();
    // Exact symmetry regardless of GEMM summation order.
    om = (T{0.5} * (om + om.transpose())).eval();
  }
  if (tape.needs({&f})) {
    tape.record(out, [f, out, work = std::move(work), n, c, hw, inv, centered]() mutable {
      auto gy = out.grad();
      auto gf = f.grad();
      for (std::size_t b = 0; b < n; ++b) {
        Eigen::Map<const RowMat<T>> fm(work.data() + b * c * hw, static_cast<Eigen::Index>(c),
                                       static_cast<Eigen::Index>(hw));
        Eigen::Map<const RowMat<T>> g(gy.data() + b * c * c, static_cast<Eigen::Index>(c),
                                      static_cast<Eigen::Index>(c));
        RowMat<T> d = inv * (g + g.transpose()) * fm;
        if (centered) remove_row_means(d);
        Eigen::Map<RowMat<T>> gm(gf.data() + b * c * hw, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(hw));
        gm += d;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> variance_matrix(BasicTape<T>& tape, const BasicTensor<T>& s, const BasicTensor<T>& sp) {
  require_rank(s, 3, "variance_matrix");
  if (s.shape() != sp.shape()) {
    fail(ErrorCode::ShapeMismatch, "variance_matrix: " + shape_str(s.shape()) + " vs " + shape_str(sp.shape()));
  }
  const auto mu = ops::scale(tape, ops::add(tape, s, sp), T{0.5});
  const auto a = ops::square(tape, ops::sub(tape, s, mu));
  const auto b = ops::square(tape, ops::sub(tape, sp, mu));
  return ops::scale(tape, ops::add(tape, a, b), T{0.5});
}

template <typename T>
BasicTensor<T> channel_weights(BasicTape<T>& tape, const BasicTensor<T>& v, const BasicAttentionHead<T>& head) {
  require_rank(v, 3, "channel_weights");
  const std::size_t n = v.shape()[0], c = v.shape()[1];
  if (v.shape()[2] != c || head.weight.shape() != Shape{c, 1}) {
    fail(ErrorCode::ShapeMismatch, "channel_weights: head " + shape_str(head.weight.shape()) +
                                       " does not match V " + shape_str(v.shape()));
  }
  const auto rows = ops::reshape(tape, v, Shape{n * c, c});
  return ops::reshape(tape, ops::sigmoid(tape, head(tape, rows)), Shape{n, c});
}

template <typename T>
BasicTensor<T> reweigh(BasicTape<T>& tape, const BasicTensor<T>& f, const BasicTensor<T>& w) {
  require_rank(f, 4, "reweigh");
  const std::size_t n = f.shape()[0], c = f.shape()[1], hw = f.shape()[2] * f.shape()[3];
  if (w.shape() != Shape{n, c}) {
    fail(ErrorCode::ShapeMismatch, "reweigh: weights " + shape_str(w.shape()) + " for features " +
                                       shape_str(f.shape()));
  }
  BasicTensor<T> out(f.shape());
  auto x = f.data(), wv = w.data();
  auto y = out.data();
  for (std::size_t k = 0; k < n * c; ++k)
    for (std::size_t p = 0; p < hw; ++p) y[k * hw + p] = x[k * hw + p] * wv[k];
  if (tape.needs({&f, &w})) {
    tape.record(out, [f, w, out, n, c, hw]() mutable {
      auto gy = out.grad();
      auto x2 = f.data(), w2 = w.data();
      if (f.requires_grad()) {
        auto gf = f.grad();
        for (std::size_t k = 0; k < n * c; ++k)
          for (std::size_t p = 0; p < hw; ++p) gf[k * hw + p] += gy[k * hw + p] * w2[k];
      }
      if (w.requires_grad()) {
        auto gw = w.grad();
        for (std::size_t k = 0; k < n * c; ++k) {
          T acc{0};
          for (std::size_t p = 0; p < hw; ++p) acc += gy[k * hw + p] * x2[k * hw + p];
          gw[k] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
std::vector<double> batch_mean_matrix(const BasicTensor<T>& m) {
  require_rank(m, 3, "batch_mean_matrix");
  const std::size_t n = m.shape()[0], cc = m.shape()[1] * m.shape()[2];
  std::vector<double> out(cc, 0.0);
  auto v = m.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < cc; ++i) out[i] += static_cast<double>(v[b * cc + i]);
  for (double& x : out) x /= static_cast<double>(std::max<std::size_t>(n, 1));
  return out;
}

void write_matrix_csv(const std::filesystem::path& path, const std::vector<double>& m, std::size_t c) {
  if (m.size() != c * c) fail(ErrorCode::ShapeMismatch, "matrix export: size is not C*C");
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", m[i * c + j]);
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

void write_matrix_heatmap(const std::filesystem::path& path, const std::vector<double>& m, std::size_t c) {
  if (m.size() != c * c) fail(ErrorCode::ShapeMismatch, "matrix export: size is not C*C");
  const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
  const double range = *hi - *lo;
  std::vector<std::uint8_t> px(m.size(), 0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (m[i] - *lo) / range));
    }
  }
  write_png_gray(path, c, c, px);
}

#define STAINLAB_INSTANTIATE_ATTENTION(T)                                                     \
  template BasicTensor<T> covariance(BasicTape<T>&, const BasicTensor<T>&, bool);             \
  template BasicTensor<T> variance_matrix(BasicTape<T>&, const BasicTensor<T>&,               \
                                          const BasicTensor<T>&);                             \
  template BasicTensor<T> channel_weights(BasicTape<T>&, const BasicTensor<T>&,               \
                                          const BasicAttentionHead<T>&);                      \
  template BasicTensor<T> reweigh(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template std::vector<double> batch_mean_matrix(const BasicTensor<T>&);

STAINLAB_INSTANTIATE_ATTENTION(float)
STAINLAB_INSTANTIATE_ATTENTION(double)

#undef STAINLAB_INSTANTIATE_ATTENTION

}  // namespace stainlab
