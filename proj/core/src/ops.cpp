#include "stainlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "stainlab/error.hpp"

namespace stainlab::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using MapMat = Eigen::Map<RowMat<T>>;
template <typename T> using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(const Ten<T>& a, const Ten<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                       shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Ten<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) +
                                       ", got " + shape_str(a.shape()));
  }
}

// Elementwise unary op with derivative expressed through input and output.
template <typename T, typename Fwd, typename Deriv>
Ten<T> unary(Tp<T>& tape, const Ten<T>& a, Fwd fwd, Deriv deriv) {
  Ten<T> out(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  if (tape.needs({&a})) {
    tape.record(out, [a, out, deriv]() mutable {
      auto gy = out.grad();
      auto gx = a.grad();
      auto xv = a.data();
      auto yv = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
    });
  }
  return out;
}

struct ConvGeom {
  std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t hw_out = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * hw_out;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? T{0}
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t hw_out = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* dxc = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * hw_out;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = dxc + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

std::size_t adaptive_start(std::size_t i, std::size_t in, std::size_t out) { return i * in / out; }
std::size_t adaptive_end(std::size_t i, std::size_t in, std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

// Shared pooling kernel. `windows` enumerates (y0,y1,x0,x1) per output cell.
struct Window {
  std::size_t y0, y1, x0, x1;
};

template <typename T>
Ten<T> pool_max(Tp<T>& tape, const Ten<T>& x, std::size_t ho, std::size_t wo,
                const std::vector<Window>& windows) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Ten<T> out(Shape{n, c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t o = 0; o < ho * wo; ++o) {
      const Window& win = windows[o];
      std::size_t best = base + win.y0 * w + win.x0;
      for (std::size_t y = win.y0; y < win.y1; ++y) {
        for (std::size_t xx = win.x0; xx < win.x1; ++xx) {
          const std::size_t idx = base + y * w + xx;
          if (xv[idx] > xv[best]) best = idx;
        }
      }
      yv[plane * ho * wo + o] = xv[best];
      argmax[plane * ho * wo + o] = best;
    }
  }
  if (tape.needs({&x})) {
    tape.record(out, [x, out, argmax = std::move(argmax)]() mutable {
      auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
    });
  }
  return out;
}

template <typename T>
Ten<T> pool_avg(Tp<T>& tape, const Ten<T>& x, std::size_t ho, std::size_t wo,
                std::vector<Window> windows) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Ten<T> out(Shape{n, c, ho, wo});
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t o = 0; o < ho * wo; ++o) {
      const Window& win = windows[o];
      T acc{0};
      for (std::size_t y = win.y0; y < win.y1; ++y) {
        for (std::size_t xx = win.x0; xx < win.x1; ++xx) acc += xv[base + y * w + xx];
      }
      yv[plane * ho * wo + o] = acc / static_cast<T>((win.y1 - win.y0) * (win.x1 - win.x0));
    }
  }
  if (tape.needs({&x})) {
    tape.record(out, [x, out, windows = std::move(windows), n, c, h, w, ho, wo]() mutable {
      auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t o = 0; o < ho * wo; ++o) {
          const Window& win = windows[o];
          const T g = gy[plane * ho * wo + o] /
                      static_cast<T>((win.y1 - win.y0) * (win.x1 - win.x0));
          for (std::size_t y = win.y0; y < win.y1; ++y) {
            for (std::size_t xx = win.x0; xx < win.x1; ++xx) gx[base + y * w + xx] += g;
          }
        }
      }
    });
  }
  return out;
}

std::vector<Window> fixed_windows(std::size_t h, std::size_t w, std::size_t window,
                                  std::size_t stride, std::size_t& ho, std::size_t& wo) {
  if (window == 0 || stride == 0) fail(ErrorCode::ShapeMismatch, "pool window and stride must be >= 1");
  if (h < window || w < window) {
    fail(ErrorCode::ShapeMismatch, "pool window " + std::to_string(window) +
                                       " exceeds input " + std::to_string(h) + "x" +
                                       std::to_string(w));
  }
  ho = (h - window) / stride + 1;
  wo = (w - window) / stride + 1;
  std::vector<Window> windows;
  windows.reserve(ho * wo);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      windows.push_back({oy * stride, oy * stride + window, ox * stride, ox * stride + window});
    }
  }
  return windows;
}

std::vector<Window> adaptive_windows(std::size_t h, std::size_t w, std::size_t out) {
  if (out == 0) fail(ErrorCode::ShapeMismatch, "adaptive pool output must be >= 1");
  std::vector<Window> windows;
  windows.reserve(out * out);
  for (std::size_t oy = 0; oy < out; ++oy) {
    for (std::size_t ox = 0; ox < out; ++ox) {
      windows.push_back({adaptive_start(oy, h, out), adaptive_end(oy, h, out),
                         adaptive_start(ox, w, out), adaptive_end(ox, w, out)});
    }
  }
  return windows;
}

}  // namespace

template <typename T>
Ten<T> add(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b) {
  require_same_shape(a, b, "add");
  Ten<T> out(a.shape());
  auto av = a.data(), bv = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  if (tape.needs({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> sub(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b) {
  require_same_shape(a, b, "sub");
  Ten<T> out(a.shape());
  auto av = a.data(), bv = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  if (tape.needs({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> mul(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b) {
  require_same_shape(a, b, "mul");
  Ten<T> out(a.shape());
  auto av = a.data(), bv = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  if (tape.needs({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto gy = out.grad();
      auto av2 = a.data(), bv2 = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av2[i];
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> scale(Tp<T>& tape, const Ten<T>& a, T factor) {
  return unary(tape, a, [factor](T x) { return x * factor; },
               [factor](T, T) { return factor; });
}

template <typename T>
Ten<T> square(Tp<T>& tape, const Ten<T>& a) {
  return unary(tape, a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <typename T>
Ten<T> sqrt(Tp<T>& tape, const Ten<T>& a) {
  for (T v : a.data()) {
    if (!(v >= T{0})) fail(ErrorCode::NonFiniteValue, "sqrt of negative or NaN value");
  }
  // d/dx sqrt(x) at 0 is taken as 0 so a perfect fit does not poison the tape.
  return unary(tape, a, [](T x) { return std::sqrt(x); },
               [](T, T y) { return y > T{0} ? T{0.5} / y : T{0}; });
}

template <typename T>
Ten<T> sum(Tp<T>& tape, const Ten<T>& a) {
  T acc{0};
  for (T v : a.data()) acc += v;
  Ten<T> out = Ten<T>::scalar(acc);
  if (tape.needs({&a})) {
    tape.record(out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Ten<T> mean(Tp<T>& tape, const Ten<T>& a) {
  if (a.numel() == 0) fail(ErrorCode::ShapeMismatch, "mean of empty tensor");
  T acc{0};
  for (T v : a.data()) acc += v;
  const T inv = T{1} / static_cast<T>(a.numel());
  Ten<T> out = Ten<T>::scalar(acc * inv);
  if (tape.needs({&a})) {
    tape.record(out, [a, out, inv]() mutable {
      const T g = out.grad()[0] * inv;
      for (T& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Ten<T> reshape(Tp<T>& tape, const Ten<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    fail(ErrorCode::ShapeMismatch, "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Ten<T> out = a.reshaped(std::move(shape));
  if (tape.needs({&a})) {
    tape.record(out, [a, out]() mutable {
      auto gy = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Ten<T> relu(Tp<T>& tape, const Ten<T>& a) {
  return unary(tape, a, [](T x) { return x > T{0} ? x : T{0}; },
               [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Ten<T> sigmoid(Tp<T>& tape, const Ten<T>& a) {
  return unary(
      tape, a,
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Ten<T> dropout(Tp<T>& tape, const Ten<T>& a, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) fail(ErrorCode::ConfigInvalid, "dropout rate must lie in [0,1)");
  if (!training || p == 0.0) {
    return unary(tape, a, [](T x) { return x; }, [](T, T) { return T{1}; });
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(a.numel());
  for (auto& m : mask) m = rng.bernoulli(p) ? T{0} : keep_scale;
  Ten<T> out(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * mask[i];
  if (tape.needs({&a})) {
    tape.record(out, [a, out, mask = std::move(mask)]() mutable {
      auto gy = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
Ten<T> gradient_reversal(Tp<T>& tape, const Ten<T>& a, double lambda) {
  if (lambda < 0.0) fail(ErrorCode::ConfigInvalid, "gradient reversal strength must be >= 0");
  const T factor = static_cast<T>(-lambda);
  return unary(tape, a, [](T x) { return x; }, [factor](T, T) { return factor; });
}

template <typename T>
Ten<T> conv2d(Tp<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias,
              std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride == 0) fail(ErrorCode::ShapeMismatch, "conv2d stride must be >= 1");
  ConvGeom g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.cin || weight.dim(3) != g.k) {
    fail(ErrorCode::ShapeMismatch, "conv2d weight " + shape_str(weight.shape()) +
                                       " incompatible with input " + shape_str(x.shape()));
  }
  if (bias.numel() != g.cout) {
    fail(ErrorCode::ShapeMismatch, "conv2d bias " + shape_str(bias.shape()) + " for " +
                                       std::to_string(g.cout) + " output channels");
  }
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    fail(ErrorCode::ShapeMismatch, "conv2d kernel larger than padded input");
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  const std::size_t patch = g.cin * g.k * g.k;
  const std::size_t hw_out = g.ho * g.wo;
  const bool direct = g.k == 1 && g.stride == 1 && g.pad == 0;

  Ten<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  std::vector<T> col(direct ? 0 : patch * hw_out);
  CMapMat<T> wmat(weight.data().data(), static_cast<Eigen::Index>(g.cout),
                  static_cast<Eigen::Index>(patch));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data().data(),
                                                             static_cast<Eigen::Index>(g.cout));
  for (std::size_t s = 0; s < g.n; ++s) {
    const T* xs = x.data().data() + s * g.cin * g.h * g.w;
    const T* colp = xs;
    if (!direct) {
      im2col(xs, g, col.data());
      colp = col.data();
    }
    CMapMat<T> cmat(colp, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(hw_out));
    MapMat<T> omat(out.data().data() + s * g.cout * hw_out, static_cast<Eigen::Index>(g.cout),
                   static_cast<Eigen::Index>(hw_out));
    omat.noalias() = wmat * cmat;
    omat.colwise() += bvec;
  }

  if (tape.needs({&x, &weight, &bias})) {
    tape.record(out, [x, weight, bias, out, g, direct]() mutable {
      const std::size_t patch = g.cin * g.k * g.k;
      const std::size_t hw_out = g.ho * g.wo;
      std::vector<T> col(direct ? 0 : patch * hw_out);
      std::vector<T> dcol(direct ? 0 : patch * hw_out);
      auto gy = out.grad();
      CMapMat<T> wmat(weight.data().data(), static_cast<Eigen::Index>(g.cout),
                      static_cast<Eigen::Index>(patch));
      for (std::size_t s = 0; s < g.n; ++s) {
        CMapMat<T> gout(gy.data() + s * g.cout * hw_out, static_cast<Eigen::Index>(g.cout),
                        static_cast<Eigen::Index>(hw_out));
        if (weight.requires_grad()) {
          const T* xs = x.data().data() + s * g.cin * g.h * g.w;
          const T* colp = xs;
          if (!direct) {
            im2col(xs, g, col.data());
            colp = col.data();
          }
          CMapMat<T> cmat(colp, static_cast<Eigen::Index>(patch),
                          static_cast<Eigen::Index>(hw_out));
          MapMat<T> gw(weight.grad().data(), static_cast<Eigen::Index>(g.cout),
                       static_cast<Eigen::Index>(patch));
          gw.noalias() += gout * cmat.transpose();
        }
        if (bias.requires_grad()) {
          // Scalar loop: Eigen's vectorised reductions round differently
          // depending on buffer alignment, which breaks bitwise replay.
          auto gb = bias.grad();
          for (Eigen::Index r = 0; r < gout.rows(); ++r) {
            T acc{0};
            for (Eigen::Index c = 0; c < gout.cols(); ++c) acc += gout(r, c);
            gb[static_cast<std::size_t>(r)] += acc;
          }
        }
        if (x.requires_grad()) {
          T* gx = x.grad().data() + s * g.cin * g.h * g.w;
          if (direct) {
            MapMat<T> gxm(gx, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(hw_out));
            gxm.noalias() += wmat.transpose() * gout;
          } else {
            MapMat<T> dc(dcol.data(), static_cast<Eigen::Index>(patch),
                         static_cast<Eigen::Index>(hw_out));
            dc.noalias() = wmat.transpose() * gout;
            col2im_add(dcol.data(), g, gx);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> maxpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t window, std::size_t stride) {
  require_rank(x, 4, "maxpool2d");
  std::size_t ho = 0, wo = 0;
  auto windows = fixed_windows(x.dim(2), x.dim(3), window, stride, ho, wo);
  return pool_max(tape, x, ho, wo, windows);
}

template <typename T>
Ten<T> avgpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t window, std::size_t stride) {
  require_rank(x, 4, "avgpool2d");
  std::size_t ho = 0, wo = 0;
  auto windows = fixed_windows(x.dim(2), x.dim(3), window, stride, ho, wo);
  return pool_avg(tape, x, ho, wo, std::move(windows));
}

template <typename T>
Ten<T> adaptive_maxpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t out) {
  require_rank(x, 4, "adaptive_maxpool2d");
  return pool_max(tape, x, out, out, adaptive_windows(x.dim(2), x.dim(3), out));
}

template <typename T>
Ten<T> adaptive_avgpool2d(Tp<T>& tape, const Ten<T>& x, std::size_t out) {
  require_rank(x, 4, "adaptive_avgpool2d");
  return pool_avg(tape, x, out, out, adaptive_windows(x.dim(2), x.dim(3), out));
}

template <typename T>
Ten<T> upsample_nearest2x(Tp<T>& tape, const Ten<T>& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Ten<T> out(Shape{n, c, 2 * h, 2 * w});
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        yv[(plane * 2 * h + y) * 2 * w + xx] = xv[(plane * h + y / 2) * w + xx / 2];
      }
    }
  }
  if (tape.needs({&x})) {
    tape.record(out, [x, out, n, c, h, w]() mutable {
      auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
          for (std::size_t xx = 0; xx < 2 * w; ++xx) {
            gx[(plane * h + y / 2) * w + xx / 2] += gy[(plane * 2 * h + y) * 2 * w + xx];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> concat_channels(Tp<T>& tape, const Ten<T>& a, const Ten<T>& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    fail(ErrorCode::ShapeMismatch, "concat_channels " + shape_str(a.shape()) + " with " +
                                       shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Ten<T> out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  auto av = a.data(), bv = b.data();
  auto yv = out.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(av.data() + s * ca * hw, ca * hw, yv.data() + s * (ca + cb) * hw);
    std::copy_n(bv.data() + s * cb * hw, cb * hw, yv.data() + s * (ca + cb) * hw + ca * hw);
  }
  if (tape.needs({&a, &b})) {
    tape.record(out, [a, b, out, n, ca, cb, hw]() mutable {
      auto gy = out.grad();
      for (std::size_t s = 0; s < n; ++s) {
        const T* src = gy.data() + s * (ca + cb) * hw;
        if (a.requires_grad()) {
          T* ga = a.grad().data() + s * ca * hw;
          for (std::size_t i = 0; i < ca * hw; ++i) ga[i] += src[i];
        }
        if (b.requires_grad()) {
          T* gb = b.grad().data() + s * cb * hw;
          for (std::size_t i = 0; i < cb * hw; ++i) gb[i] += src[ca * hw + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> batchnorm(Tp<T>& tape, const Ten<T>& x, const Ten<T>& gamma, const Ten<T>& beta,
                 Ten<T>& running_mean, Ten<T>& running_var, bool training, double eps,
                 double momentum) {
  if (x.rank() != 2 && x.rank() != 4) {
    fail(ErrorCode::ShapeMismatch, "batchnorm expects [N,C] or [N,C,H,W], got " +
                                       shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    fail(ErrorCode::ShapeMismatch, "batchnorm parameters do not match " + std::to_string(c) +
                                       " channels");
  }
  const std::size_t m = n * hw;
  if (training && m <= 1) {
    fail(ErrorCode::DegenerateBatch, "batchnorm training needs more than one value per channel");
  }
  Ten<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(c);
  auto xv = x.data();
  auto yv = out.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  auto rm = running_mean.data();
  auto rv = running_var.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      T acc{0};
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = xv.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      }
      mu = acc / static_cast<T>(m);
      T sq{0};
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = xv.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      var = sq / static_cast<T>(m);
      const T mom = static_cast<T>(momentum);
      rm[ch] = (T{1} - mom) * rm[ch] + mom * mu;
      rv[ch] = (T{1} - mom) * rv[ch] + mom * (sq / static_cast<T>(m - 1));
    } else {
      mu = rm[ch];
      var = rv[ch];
    }
    const T is = T{1} / std::sqrt(var + static_cast<T>(eps));
    inv_std[ch] = is;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xv[off + i] - mu) * is;
        xhat[off + i] = xh;
        yv[off + i] = gv[ch] * xh + bv[ch];
      }
    }
  }
  if (tape.needs({&x, &gamma, &beta})) {
    tape.record(out, [x, gamma, beta, out, xhat = std::move(xhat),
                      inv_std = std::move(inv_std), n, c, hw, m, training]() mutable {
      auto gy = out.grad();
      auto gv2 = gamma.data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_dy{0}, sum_dy_xhat{0};
        for (std::size_t s = 0; s < n; ++s) {
          const std::size_t off = (s * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_dy += gy[off + i];
            sum_dy_xhat += gy[off + i] * xhat[off + i];
          }
        }
        if (gamma.requires_grad()) gamma.grad()[ch] += sum_dy_xhat;
        if (beta.requires_grad()) beta.grad()[ch] += sum_dy;
        if (!x.requires_grad()) continue;
        auto gx = x.grad();
        const T scale_g = gv2[ch] * inv_std[ch];
        if (training) {
          const T inv_m = T{1} / static_cast<T>(m);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              gx[off + i] +=
                  scale_g * (gy[off + i] - inv_m * sum_dy - xhat[off + i] * inv_m * sum_dy_xhat);
            }
          }
        } else {
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) gx[off + i] += scale_g * gy[off + i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> dense(Tp<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias) {
  require_rank(x, 2, "dense input");
  require_rank(weight, 2, "dense weight");
  const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(1);
  if (weight.dim(0) != d || bias.numel() != k) {
    fail(ErrorCode::ShapeMismatch, "dense weight " + shape_str(weight.shape()) + " / bias " +
                                       shape_str(bias.shape()) + " for input " +
                                       shape_str(x.shape()));
  }
  using Idx = Eigen::Index;
  Ten<T> out(Shape{n, k});
  CMapMat<T> xm(x.data().data(), static_cast<Idx>(n), static_cast<Idx>(d));
  CMapMat<T> wm(weight.data().data(), static_cast<Idx>(d), static_cast<Idx>(k));
  MapMat<T> ym(out.data().data(), static_cast<Idx>(n), static_cast<Idx>(k));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data().data(), static_cast<Idx>(k));
  ym.noalias() = xm * wm;
  ym.rowwise() += bv;
  if (tape.needs({&x, &weight, &bias})) {
    tape.record(out, [x, weight, bias, out, n, d, k]() mutable {
      CMapMat<T> gy(out.grad().data(), static_cast<Idx>(n), static_cast<Idx>(k));
      if (x.requires_grad()) {
        CMapMat<T> wm2(weight.data().data(), static_cast<Idx>(d), static_cast<Idx>(k));
        MapMat<T> gx(x.grad().data(), static_cast<Idx>(n), static_cast<Idx>(d));
        gx.noalias() += gy * wm2.transpose();
      }
      if (weight.requires_grad()) {
        CMapMat<T> xm2(x.data().data(), static_cast<Idx>(n), static_cast<Idx>(d));
        MapMat<T> gw(weight.grad().data(), static_cast<Idx>(d), static_cast<Idx>(k));
        gw.noalias() += xm2.transpose() * gy;
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (Idx c = 0; c < gy.cols(); ++c) {
          T acc{0};
          for (Idx r = 0; r < gy.rows(); ++r) acc += gy(r, c);
          gb[static_cast<std::size_t>(c)] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> bce_with_logits(Tp<T>& tape, const Ten<T>& logits, const Ten<T>& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  auto z = logits.data();
  auto t = targets.data();
  T acc{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    acc += std::max(z[i], T{0}) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const T inv = T{1} / static_cast<T>(z.size());
  Ten<T> out = Ten<T>::scalar(acc * inv);
  if (tape.needs({&logits})) {
    tape.record(out, [logits, targets, out, inv]() mutable {
      const T g = out.grad()[0] * inv;
      auto zv = logits.data();
      auto tv = targets.data();
      auto gz = logits.grad();
      for (std::size_t i = 0; i < gz.size(); ++i) {
        const T p = zv[i] >= T{0} ? T{1} / (T{1} + std::exp(-zv[i]))
                                  : std::exp(zv[i]) / (T{1} + std::exp(zv[i]));
        gz[i] += g * (p - tv[i]);
      }
    });
  }
  return out;
}

template <typename T>
Ten<T> soft_dice_with_logits(Tp<T>& tape, const Ten<T>& logits, const Ten<T>& targets, double smooth) {
  require_same_shape(logits, targets, "soft_dice_with_logits");
  auto z = logits.data();
  auto t = targets.data();
  std::vector<T> p(z.size());
  T inter{0}, total{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = z[i] >= T{0} ? T{1} / (T{1} + std::exp(-z[i])) : std::exp(z[i]) / (T{1} + std::exp(z[i]));
    inter += p[i] * t[i];
    total += p[i] + t[i];
  }
  const T eps = static_cast<T>(smooth);
  const T num = T{2} * inter + eps, den = total + eps;
  Ten<T> out = Ten<T>::scalar(T{1} - num / den);
  if (tape.needs({&logits})) {
    tape.record(out, [logits, targets, out, p = std::move(p), num, den]() mutable {
      const T g = out.grad()[0];
      auto tv = targets.data();
      auto gz = logits.grad();
      for (std::size_t i = 0; i < gz.size(); ++i) {
        const T dp = -(T{2} * tv[i] * den - num) / (den * den);
        gz[i] += g * dp * p[i] * (T{1} - p[i]);
      }
    });
  }
  return out;
}

#define STAINLAB_INSTANTIATE_OPS(T)                                                          \
  template Ten<T> add(Tp<T>&, const Ten<T>&, const Ten<T>&);                                 \
  template Ten<T> sub(Tp<T>&, const Ten<T>&, const Ten<T>&);                                 \
  template Ten<T> mul(Tp<T>&, const Ten<T>&, const Ten<T>&);                                 \
  template Ten<T> scale(Tp<T>&, const Ten<T>&, T);                                           \
  template Ten<T> square(Tp<T>&, const Ten<T>&);                                             \
  template Ten<T> sqrt(Tp<T>&, const Ten<T>&);                                               \
  template Ten<T> sum(Tp<T>&, const Ten<T>&);                                                \
  template Ten<T> mean(Tp<T>&, const Ten<T>&);                                               \
  template Ten<T> reshape(Tp<T>&, const Ten<T>&, Shape);                                     \
  template Ten<T> relu(Tp<T>&, const Ten<T>&);                                               \
  template Ten<T> sigmoid(Tp<T>&, const Ten<T>&);                                            \
  template Ten<T> dropout(Tp<T>&, const Ten<T>&, double, bool, Rng&);                        \
  template Ten<T> gradient_reversal(Tp<T>&, const Ten<T>&, double);                          \
  template Ten<T> conv2d(Tp<T>&, const Ten<T>&, const Ten<T>&, const Ten<T>&, std::size_t,   \
                         std::size_t);                                                       \
  template Ten<T> maxpool2d(Tp<T>&, const Ten<T>&, std::size_t, std::size_t);                \
  template Ten<T> avgpool2d(Tp<T>&, const Ten<T>&, std::size_t, std::size_t);                \
  template Ten<T> adaptive_maxpool2d(Tp<T>&, const Ten<T>&, std::size_t);                    \
  template Ten<T> adaptive_avgpool2d(Tp<T>&, const Ten<T>&, std::size_t);                    \
  template Ten<T> upsample_nearest2x(Tp<T>&, const Ten<T>&);                                 \
  template Ten<T> concat_channels(Tp<T>&, const Ten<T>&, const Ten<T>&);                     \
  template Ten<T> batchnorm(Tp<T>&, const Ten<T>&, const Ten<T>&, const Ten<T>&, Ten<T>&,    \
                            Ten<T>&, bool, double, double);                                  \
  template Ten<T> dense(Tp<T>&, const Ten<T>&, const Ten<T>&, const Ten<T>&);                \
  template Ten<T> bce_with_logits(Tp<T>&, const Ten<T>&, const Ten<T>&);                     \
  template Ten<T> soft_dice_with_logits(Tp<T>&, const Ten<T>&, const Ten<T>&, double);

STAINLAB_INSTANTIATE_OPS(float)
STAINLAB_INSTANTIATE_OPS(double)

#undef STAINLAB_INSTANTIATE_OPS

}  // namespace stainlab::ops
