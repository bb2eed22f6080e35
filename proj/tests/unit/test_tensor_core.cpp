#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "doctest.h"
#include "stainlab/error.hpp"
#include "stainlab/grad_check.hpp"
#include "stainlab/ops.hpp"
#include "stainlab/optim.hpp"
#include "stainlab/params.hpp"
#include "test_util.hpp"

using namespace stainlab;
using testutil::random_tensor;
using testutil::to_vec;

namespace {

// Reduces an arbitrary-shape output to a scalar through fixed random weights
// so every output coordinate contributes a distinct upstream gradient.
template <typename T>
BasicTensor<T> probe(BasicTape<T>& tape, const BasicTensor<T>& y, std::uint64_t seed) {
  BasicTensor<T> w = random_tensor<T>(y.shape(), seed);
  return ops::sum(tape, ops::mul(tape, y, w));
}

double check_op(const std::function<TensorD(TapeD&)>& f, std::vector<TensorD> wrt) {
  return grad_check<double>(f, std::move(wrt), 1e-6).max_relative_error;
}

}  // namespace

TEST_CASE("conv2d forward examples") {
  Tape tape(false);
  SUBCASE("zero input gives zero output with zero bias") {
    Tensor x(Shape{1, 1, 3, 3});
    Tensor w = random_tensor<float>({1, 1, 2, 2}, 1);
    Tensor b(Shape{1});
    auto y = ops::conv2d(tape, x, w, b, 1, 0);
    for (float v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("scalar affine map") {
    Tensor x(Shape{1, 1, 1, 1}, {2.0f});
    Tensor w(Shape{1, 1, 1, 1}, {3.0f});
    Tensor b(Shape{1}, {1.0f});
    auto y = ops::conv2d(tape, x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 7.0f);
  }
  SUBCASE("2x2 ones kernel sums the window") {
    Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor w(Shape{1, 1, 2, 2}, 1.0f);
    Tensor b(Shape{1});
    auto y = ops::conv2d(tape, x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 10.0f);
  }
  SUBCASE("matches a direct cross-correlation loop with stride and padding") {
    Tensor x = random_tensor<float>({2, 3, 7, 6}, 3);
    Tensor w = random_tensor<float>({4, 3, 3, 3}, 4);
    Tensor b = random_tensor<float>({4}, 5);
    auto y = ops::conv2d(tape, x, w, b, 2, 1);
    REQUIRE(y.shape() == Shape{2, 4, 4, 3});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t co = 0; co < 4; ++co)
        for (std::size_t oy = 0; oy < 4; ++oy)
          for (std::size_t ox = 0; ox < 3; ++ox) {
            double acc = b[co];
            for (std::size_t ci = 0; ci < 3; ++ci)
              for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                  const long iy = long(oy * 2 + ky) - 1, ix = long(ox * 2 + kx) - 1;
                  if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                  acc += double(x[((n * 3 + ci) * 7 + iy) * 6 + ix]) *
                         w[((co * 3 + ci) * 3 + ky) * 3 + kx];
                }
            CHECK(y[((n * 4 + co) * 4 + oy) * 3 + ox] == doctest::Approx(acc).epsilon(1e-5));
          }
  }
  SUBCASE("channel mismatch is a ShapeMismatch") {
    Tensor x(Shape{1, 2, 3, 3});
    Tensor w(Shape{1, 3, 1, 1});
    Tensor b(Shape{1});
    CHECK_THROWS_AS(ops::conv2d(tape, x, w, b, 1, 0), Error);
  }
}

TEST_CASE("maxpool2d examples and gradient routing") {
  SUBCASE("max of four") {
    Tape tape(false);
    Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(ops::maxpool2d(tape, x, 2, 2).item() == 4.0f);
  }
  SUBCASE("all negative window picks the largest") {
    Tape tape(false);
    Tensor x(Shape{1, 1, 2, 2}, {-1, -2, -3, -4});
    CHECK(ops::maxpool2d(tape, x, 2, 2).item() == -1.0f);
  }
  SUBCASE("constant input routes the gradient to the first index") {
    Tape tape;
    Tensor x(Shape{1, 1, 2, 2}, 5.0f);
    x.set_requires_grad(true);
    auto y = ops::maxpool2d(tape, x, 2, 2);
    CHECK(y.item() == 5.0f);
    auto loss = ops::sum(tape, y);
    tape.backward(loss);
    CHECK(to_vec(Tensor(x)) == std::vector<float>{5, 5, 5, 5});
    std::vector<float> g(x.grad().begin(), x.grad().end());
    CHECK(g == std::vector<float>{1, 0, 0, 0});
  }
  SUBCASE("gradient mass lands on argmax positions and is conserved") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Tape tape;
      Tensor x = random_tensor<float>({2, 3, 8, 8}, seed);
      x.set_requires_grad(true);
      auto y = ops::maxpool2d(tape, x, 2, 2);
      Tensor up = random_tensor<float>(y.shape(), seed + 100, 0.1, 1.0);
      auto loss = ops::sum(tape, ops::mul(tape, y, up));
      tape.backward(loss);
      double deposited = 0, upstream = 0;
      for (float v : up.data()) upstream += v;
      auto g = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] != 0.0f) {
          // Only values that equal their window's max may receive gradient.
          bool is_output = false;
          for (float v : y.data()) is_output |= (v == x[i]);
          CHECK(is_output);
        }
        deposited += g[i];
      }
      CHECK(deposited == doctest::Approx(upstream).epsilon(1e-5));
    }
  }
}

TEST_CASE("batchnorm examples") {
  SUBCASE("standardized batch passes through") {
    Tape tape(false);
    Tensor x(Shape{4, 1}, {-1.3416408f, -0.4472136f, 0.4472136f, 1.3416408f});
    Tensor gamma(Shape{1}, 1.0f), beta(Shape{1}), rm(Shape{1}), rv(Shape{1}, 1.0f);
    auto y = ops::batchnorm(tape, x, gamma, beta, rm, rv, true, 1e-5, 0.1);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y[i] - x[i]) < 1e-5);
  }
  SUBCASE("zero scale yields the shift everywhere") {
    Tape tape(false);
    Tensor x = random_tensor<float>({3, 2, 4, 4}, 7);
    Tensor gamma(Shape{2}, 0.0f), beta(Shape{2}, {0.25f, -2.0f}), rm(Shape{2}), rv(Shape{2}, 1.0f);
    auto y = ops::batchnorm(tape, x, gamma, beta, rm, rv, true, 1e-5, 0.1);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 16; ++i) CHECK(y[(n * 2 + c) * 16 + i] == beta[c]);
  }
  SUBCASE("two values normalise to plus and minus one") {
    Tape tape(false);
    Tensor x(Shape{2, 1}, {1.0f, 3.0f});
    Tensor gamma(Shape{1}, 1.0f), beta(Shape{1}), rm(Shape{1}), rv(Shape{1}, 1.0f);
    auto y = ops::batchnorm(tape, x, gamma, beta, rm, rv, true, 1e-5, 0.1);
    // mean 2, biased variance 1
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(rm[0] == doctest::Approx(0.2));
    CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased variance 2
  }
  SUBCASE("eval mode uses running statistics") {
    Tape tape(false);
    Tensor x(Shape{1, 1}, {3.0f});
    Tensor gamma(Shape{1}, 2.0f), beta(Shape{1}, 1.0f), rm(Shape{1}, 1.0f), rv(Shape{1}, 4.0f);
    auto y = ops::batchnorm(tape, x, gamma, beta, rm, rv, false, 0.0, 0.1);
    CHECK(y.item() == doctest::Approx(3.0));
  }
  SUBCASE("single value per channel in training is a DegenerateBatch") {
    Tape tape(false);
    Tensor x(Shape{1, 1, 1, 1}, {1.0f});
    Tensor gamma(Shape{1}, 1.0f), beta(Shape{1}), rm(Shape{1}), rv(Shape{1}, 1.0f);
    try {
      ops::batchnorm(tape, x, gamma, beta, rm, rv, true, 1e-5, 0.1);
      FAIL("expected DegenerateBatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateBatch);
    }
  }
}

TEST_CASE("dense examples") {
  Tape tape(false);
  Tensor x(Shape{1, 2}, {1.0f, 2.0f});
  SUBCASE("zero weights and bias") {
    auto y = ops::dense(tape, x, Tensor(Shape{2, 3}), Tensor(Shape{3}));
    CHECK(to_vec(y) == std::vector<float>{0, 0, 0});
  }
  SUBCASE("identity weights") {
    auto y = ops::dense(tape, x, Tensor(Shape{2, 2}, {1, 0, 0, 1}), Tensor(Shape{2}));
    CHECK(to_vec(y) == std::vector<float>{1, 2});
  }
  SUBCASE("hand dot product") {
    auto y = ops::dense(tape, x, Tensor(Shape{2, 1}, {1, 1}), Tensor(Shape{1}, {0.5f}));
    CHECK(y.item() == 3.5f);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ops::dense(tape, x, Tensor(Shape{3, 1}), Tensor(Shape{1})), Error);
  }
}

TEST_CASE("activations") {
  Tape tape(false);
  Rng rng(1);
  CHECK(ops::sigmoid(tape, Tensor::scalar(0.0f)).item() == 0.5f);
  Tensor neg(Shape{3}, {-0.5f, -2.0f, -1e-3f});
  auto rectified = ops::relu(tape, neg);
  for (float v : rectified.data()) CHECK(v == 0.0f);
  Tensor x = random_tensor<float>({4, 5}, 2);
  auto same = ops::dropout(tape, x, 0.0, true, rng);
  CHECK(to_vec(same) == to_vec(x));
  auto eval = ops::dropout(tape, x, 0.5, false, rng);
  CHECK(to_vec(eval) == to_vec(x));
  auto dropped = ops::dropout(tape, x, 0.5, true, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK((dropped[i] == 0.0f || dropped[i] == doctest::Approx(2.0f * x[i])));
  }
  CHECK(ops::sigmoid(tape, Tensor::scalar(-200.0f)).all_finite());
}

TEST_CASE("grad_check examples") {
  SUBCASE("sum of squares at [1,2,3]") {
    Tensor x(Shape{3}, {1, 2, 3});
    auto res = grad_check<float>(
        [&](Tape& tape) { return ops::sum(tape, ops::square(tape, x)); }, {x}, 1e-2);
    CHECK(res.max_relative_error < 1e-4);
    std::vector<float> g(x.grad().begin(), x.grad().end());
    CHECK(g == std::vector<float>{2, 4, 6});
  }
  SUBCASE("linear sum has unit gradient") {
    Tensor x = random_tensor<float>({5}, 9);
    auto res = grad_check<float>([&](Tape& tape) { return ops::sum(tape, x); }, {x}, 1e-2);
    CHECK(res.max_relative_error < 1e-5);
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  SUBCASE("non-finite loss is reported") {
    Tensor x(Shape{1}, {-1.0f});
    CHECK_THROWS_AS(
        grad_check<float>([&](Tape& tape) { return ops::sum(tape, ops::sqrt(tape, x)); }, {x}, 1e-3),
        Error);
  }
}

TEST_CASE("every differentiable op matches central finite differences") {
  constexpr double kTol = 1e-3;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    CAPTURE(seed);
    TensorD a = random_tensor<double>({2, 3, 6, 6}, seed * 10 + 1);
    TensorD b = random_tensor<double>({2, 3, 6, 6}, seed * 10 + 2);
    auto unary_check = [&](auto op) {
      return check_op([&](TapeD& t) { return probe(t, op(t, a), 77); }, {a});
    };
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::add(t, a, b), 70); }, {a, b}) < kTol);
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::sub(t, a, b), 71); }, {a, b}) < kTol);
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::mul(t, a, b), 72); }, {a, b}) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::scale(t, x, 1.7); }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::square(t, x); }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::relu(t, x); }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::sigmoid(t, x); }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::mean(t, x); }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) {
            return ops::sqrt(t, ops::square(t, x));
          }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) {
            return ops::reshape(t, x, Shape{6, 36});
          }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::maxpool2d(t, x, 2, 2); }) <
          kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::avgpool2d(t, x, 3, 2); }) <
          kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) {
            return ops::adaptive_maxpool2d(t, x, 4);
          }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) {
            return ops::adaptive_avgpool2d(t, x, 4);
          }) < kTol);
    CHECK(unary_check([](TapeD& t, const TensorD& x) { return ops::upsample_nearest2x(t, x); }) <
          kTol);
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::concat_channels(t, a, b), 73); },
                   {a, b}) < kTol);
    {
      Rng rng(seed);
      const std::uint64_t drop_seed = seed + 5;
      CHECK(check_op(
                [&](TapeD& t) {
                  Rng local(drop_seed);
                  return probe(t, ops::dropout(t, a, 0.5, true, local), 74);
                },
                {a}) < kTol);
    }

    TensorD w = random_tensor<double>({4, 3, 3, 3}, seed * 10 + 3);
    TensorD bias = random_tensor<double>({4}, seed * 10 + 4);
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::conv2d(t, a, w, bias, 1, 1), 75); },
                   {a, w, bias}) < kTol);
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::conv2d(t, a, w, bias, 2, 0), 76); },
                   {a, w, bias}) < kTol);
    TensorD w1 = random_tensor<double>({2, 3, 1, 1}, seed * 10 + 5);
    TensorD b1 = random_tensor<double>({2}, seed * 10 + 6);
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::conv2d(t, a, w1, b1, 1, 0), 78); },
                   {a, w1, b1}) < kTol);

    TensorD gamma = random_tensor<double>({3}, seed * 10 + 7, 0.5, 1.5);
    TensorD beta = random_tensor<double>({3}, seed * 10 + 8);
    for (bool training : {true, false}) {
      CAPTURE(training);
      CHECK(check_op(
                [&](TapeD& t) {
                  TensorD rm(Shape{3}, 0.1), rv(Shape{3}, 0.9);
                  return probe(t, ops::batchnorm(t, a, gamma, beta, rm, rv, training, 1e-5, 0.1),
                               79);
                },
                {a, gamma, beta}) < kTol);
    }

    TensorD x2 = random_tensor<double>({5, 7}, seed * 10 + 9);
    TensorD wd = random_tensor<double>({7, 3}, seed * 10 + 10);
    TensorD bd = random_tensor<double>({3}, seed * 10 + 11);
    CHECK(check_op([&](TapeD& t) { return probe(t, ops::dense(t, x2, wd, bd), 80); },
                   {x2, wd, bd}) < kTol);

    TensorD targets = random_tensor<double>({2, 3, 6, 6}, seed * 10 + 12, 0.0, 1.0);
    for (auto& v : targets.data()) v = v > 0.5 ? 1.0 : 0.0;
    TensorD logits = random_tensor<double>({2, 3, 6, 6}, seed * 10 + 13, -3.0, 3.0);
    CHECK(check_op([&](TapeD& t) { return ops::bce_with_logits(t, logits, targets); }, {logits}) <
          kTol);
    CHECK(check_op([&](TapeD& t) { return ops::soft_dice_with_logits(t, logits, targets); }, {logits}) <
          kTol);
  }
}

TEST_CASE("soft dice examples") {
  Tape tape;
  const Tensor y({1, 4}, std::vector<float>{1, 0, 1, 0});
  // Confident correct logits drive the loss to zero, inverted ones to one.
  CHECK(ops::soft_dice_with_logits(tape, Tensor({1, 4}, std::vector<float>{40, -40, 40, -40}), y, 0.0).item() ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(ops::soft_dice_with_logits(tape, Tensor({1, 4}, std::vector<float>{-40, 40, -40, 40}), y, 0.0).item() ==
        doctest::Approx(1.0).epsilon(1e-6));
  // Zero logits: p = 0.5 everywhere, dice = 2*1 / (2 + 2) = 0.5.
  CHECK(ops::soft_dice_with_logits(tape, Tensor({1, 4}), y, 0.0).item() == doctest::Approx(0.5));
}

TEST_CASE("float32 gradients agree with the float64 instantiation") {
  Tensor x = random_tensor<float>({2, 3, 6, 6}, 4);
  Tensor w = random_tensor<float>({4, 3, 3, 3}, 5);
  Tensor b = random_tensor<float>({4}, 6);
  TensorD xd(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  TensorD wd(w.shape(), std::vector<double>(w.data().begin(), w.data().end()));
  TensorD bd(b.shape(), std::vector<double>(b.data().begin(), b.data().end()));
  w.set_requires_grad(true);
  wd.set_requires_grad(true);
  {
    Tape tape;
    auto loss = probe(tape, ops::relu(tape, ops::conv2d(tape, x, w, b, 1, 1)), 3);
    tape.backward(loss);
  }
  {
    TapeD tape;
    auto loss = probe(tape, ops::relu(tape, ops::conv2d(tape, xd, wd, bd, 1, 1)), 3);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < w.numel(); ++i) {
    CHECK(relative_error(w.grad()[i], wd.grad()[i], 1e-3) < 1e-4);
  }
}

TEST_CASE("backprop is linear over branches") {
  TensorD x = random_tensor<double>({2, 2, 4, 4}, 11);
  TensorD w = random_tensor<double>({3, 2, 3, 3}, 12);
  TensorD b = random_tensor<double>({3}, 13);
  auto branch1 = [&](TapeD& t) { return probe(t, ops::sigmoid(t, ops::conv2d(t, x, w, b, 1, 1)), 1); };
  auto branch2 = [&](TapeD& t) { return probe(t, ops::maxpool2d(t, ops::conv2d(t, x, w, b, 1, 0), 2, 2), 2); };
  auto grad_of = [&](auto fn) {
    w.set_requires_grad(true);
    w.zero_grad();
    TapeD tape;
    auto loss = fn(tape);
    tape.backward(loss);
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  auto g1 = grad_of(branch1);
  auto g2 = grad_of(branch2);
  auto g12 = grad_of([&](TapeD& t) { return ops::add(t, branch1(t), branch2(t)); });
  for (std::size_t i = 0; i < g12.size(); ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("tape replays every record once and clears") {
  Tape tape;
  Tensor x(Shape{2}, {1.0f, -2.0f});
  x.set_requires_grad(true);
  auto y = ops::scale(tape, x, 3.0f);
  auto z = ops::add(tape, y, y);  // y used twice: gradient accumulates, records run once
  auto loss = ops::sum(tape, z);
  CHECK(tape.size() == 3);
  tape.backward(loss);
  CHECK(x.grad()[0] == 6.0f);
  CHECK(x.grad()[1] == 6.0f);
  tape.clear();
  CHECK(tape.size() == 0);

  SUBCASE("repeated steps do not accumulate records") {
    for (int step = 0; step < 5; ++step) {
      auto l = ops::sum(tape, ops::square(tape, x));
      tape.backward(l);
      tape.clear();
      CHECK(tape.size() == 0);
    }
  }
  SUBCASE("non-recording tape keeps nothing") {
    Tape off(false);
    ops::sum(off, ops::square(off, x));
    CHECK(off.size() == 0);
  }
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient and zero weight decay leave parameters unchanged") {
    ParamStore store;
    store.add("w", Tensor(Shape{3}, {1.0f, -2.0f, 0.5f}), true);
    store.at("w").grad();
    AdamW opt({.lr = 1e-2, .weight_decay = 0.0});
    opt.step(store);
    CHECK(to_vec(store.at("w")) == std::vector<float>{1.0f, -2.0f, 0.5f});
  }
  SUBCASE("one step on w^2 moves towards zero") {
    ParamStore store;
    Tensor& w = store.add("w", Tensor(Shape{1}, {1.0f}), true);
    AdamW opt({.lr = 1e-2});
    Tape tape;
    auto loss = ops::sum(tape, ops::square(tape, w));
    tape.backward(loss);
    opt.step(store);
    CHECK(std::abs(w[0]) < 1.0f);
  }
  SUBCASE("ten steps on a 2-d quadratic match a scalar simulation and decrease monotonically") {
    // Independent double-precision AdamW simulation of f(w) = w0^2 + 3 w1^2.
    const double lr = 1e-2, wd = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double sw[2] = {1.0, -0.7}, m[2] = {0, 0}, v[2] = {0, 0};
    const double coef[2] = {1.0, 3.0};
    std::vector<double> expected_loss;
    for (int t = 1; t <= 10; ++t) {
      for (int i = 0; i < 2; ++i) {
        const double g = 2 * coef[i] * sw[i];
        sw[i] -= lr * wd * sw[i];
        m[i] = b1 * m[i] + (1 - b1) * g;
        v[i] = b2 * v[i] + (1 - b2) * g * g;
        sw[i] -= lr * (m[i] / (1 - std::pow(b1, t))) / (std::sqrt(v[i] / (1 - std::pow(b2, t))) + eps);
      }
      expected_loss.push_back(sw[0] * sw[0] + 3 * sw[1] * sw[1]);
    }
    ParamStore store;
    Tensor& w = store.add("w", Tensor(Shape{2}, {1.0f, -0.7f}), true);
    Tensor c(Shape{2}, {1.0f, 3.0f});
    AdamW opt({.lr = lr, .weight_decay = wd});
    double previous = 1.0 + 3 * 0.49;
    for (int t = 0; t < 10; ++t) {
      store.zero_grad();
      Tape tape;
      auto loss = ops::sum(tape, ops::mul(tape, c, ops::square(tape, w)));
      tape.backward(loss);
      opt.step(store);
      const double now = w[0] * w[0] + 3.0 * w[1] * w[1];
      CHECK(now < previous);
      CHECK(now == doctest::Approx(expected_loss[t]).epsilon(1e-5));
      previous = now;
    }
    CHECK(opt.steps() == 10);
  }
  SUBCASE("non-finite gradient aborts without touching parameters") {
    ParamStore store;
    Tensor& w = store.add("w", Tensor(Shape{1}, {1.0f}), true);
    w.grad()[0] = std::nanf("");
    AdamW opt;
    CHECK_THROWS_AS(opt.step(store), Error);
    CHECK(w[0] == 1.0f);
  }
  SUBCASE("buffers are never updated") {
    ParamStore store;
    Tensor& buf = store.add("rm", Tensor(Shape{1}, {0.3f}), false);
    buf.grad()[0] = 1.0f;
    AdamW opt({.lr = 1.0});
    opt.step(store);
    CHECK(buf[0] == 0.3f);
  }
}

TEST_CASE("identical seeds give bit-identical training steps") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    auto conv = BasicConv2d<float>::create(store, "conv", 3, 4, 3, 1, 1, rng);
    auto bn = BasicBatchNorm<float>::create(store, "bn", 4);
    auto head = BasicDense<float>::create(store, "head", 4 * 4 * 4, 2, rng);
    AdamW opt({.lr = 1e-2});
    Tensor x = random_tensor<float>({2, 3, 8, 8}, seed + 1);
    for (int step = 0; step < 2; ++step) {
      store.zero_grad();
      Tape tape;
      auto h = ops::relu(tape, bn(tape, conv(tape, x), true));
      h = ops::maxpool2d(tape, h, 2, 2);
      h = ops::dropout(tape, ops::reshape(tape, h, Shape{2, 64}), 0.5, true, rng);
      auto loss = ops::mean(tape, ops::square(tape, head(tape, h)));
      tape.backward(loss);
      opt.step(store);
    }
    std::vector<float> flat;
    for (const auto& [_, e] : store.entries()) flat.insert(flat.end(), e.tensor.data().begin(), e.tensor.data().end());
    return flat;
  };
  auto a = run(3), b = run(3), c = run(4);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  CHECK(a != c);
}

TEST_CASE("parameter names are unique") {
  ParamStore store;
  store.add("x", Tensor(Shape{1}), true);
  CHECK_THROWS_AS(store.add("x", Tensor(Shape{1}), true), Error);
}
