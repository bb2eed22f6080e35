#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "stainlab/attention.hpp"
#include "stainlab/error.hpp"
#include "stainlab/grad_check.hpp"
#include "stainlab/ops.hpp"
#include "test_util.hpp"

using namespace stainlab;
using testutil::random_tensor;

namespace {

double sigmoid_oracle(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain triple loop reference for the Gram matrix.
std::vector<double> gram_oracle(const TensorD& f) {
  const std::size_t n = f.shape()[0], c = f.shape()[1], hw = f.shape()[2] * f.shape()[3];
  std::vector<double> out(n * c * c, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += f[(b * c + i) * hw + p] * f[(b * c + j) * hw + p];
        out[(b * c + i) * c + j] = acc / static_cast<double>(hw);
      }
  return out;
}

BasicAttentionHead<double> make_head(BasicParamStore<double>& store, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return create_attention_head(store, "attn", c, rng);
}

}  // namespace

TEST_CASE("covariance examples") {
  TapeD tape;
  CHECK(testutil::to_vec(covariance(tape, TensorD({2, 3, 4, 4}))) == std::vector<double>(18, 0.0));

  TensorD f({1, 2, 1, 2}, std::vector<double>{1, 1, 0, 0});
  CHECK(testutil::to_vec(covariance(tape, f)) == std::vector<double>{1, 0, 0, 0});

  const TensorD r = random_tensor<double>({2, 5, 3, 4}, 1);
  const auto got = testutil::to_vec(covariance(tape, r));
  const auto want = gram_oracle(r);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

  CHECK_THROWS_AS(covariance(tape, TensorD({2, 3})), Error);
}

TEST_CASE("covariance is a symmetric PSD Gram matrix invariant to pixel order") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tape tape;
    const Tensor f = random_tensor<float>({2, 8, 6, 6}, seed);
    const Tensor s = covariance(tape, f);
    for (std::size_t b = 0; b < 2; ++b) {
      Eigen::MatrixXd m(8, 8);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) m(i, j) = s[(b * 8 + i) * 8 + j];
      CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-5);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-4);
    }
    // Reverse the spatial order of every channel.
    Tensor rev(f.shape());
    for (std::size_t k = 0; k < 16; ++k)
      for (std::size_t p = 0; p < 36; ++p) rev[k * 36 + p] = f[k * 36 + 35 - p];
    const Tensor s2 = covariance(tape, rev);
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s2[i] == doctest::Approx(s[i]).epsilon(1e-5));
  }
}

TEST_CASE("centered covariance removes channel means") {
  TapeD tape;
  TensorD f = random_tensor<double>({1, 3, 4, 4}, 2);
  TensorD shifted(f.shape(), testutil::to_vec(f));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t p = 0; p < 16; ++p) shifted[k * 16 + p] += 5.0 * (k + 1);
  const auto a = testutil::to_vec(covariance(tape, f, true));
  const auto b = testutil::to_vec(covariance(tape, shifted, true));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-10));
}

TEST_CASE("variance matrix examples and algebra") {
  TapeD tape;
  CHECK(variance_matrix(tape, TensorD({1, 1, 1}, std::vector<double>{2}), TensorD({1, 1, 1})).item() == 1.0);

  const TensorD s = random_tensor<double>({2, 4, 4}, 3);
  CHECK(testutil::to_vec(variance_matrix(tape, s, s)) == std::vector<double>(32, 0.0));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tape t;
    const Tensor a = random_tensor<float>({3, 6, 6}, seed);
    const Tensor b = random_tensor<float>({3, 6, 6}, seed + 100);
    const Tensor v = variance_matrix(t, a, b);
    const Tensor v2 = variance_matrix(t, b, a);
    for (std::size_t i = 0; i < v.numel(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      CHECK(std::abs(v[i] - 0.25 * d * d) < 1e-5);
      CHECK(v[i] >= 0.0f);
      CHECK(v[i] == v2[i]);
    }
  }

  // V vanishes exactly where the covariances agree.
  TensorD a = random_tensor<double>({1, 3, 3}, 7);
  TensorD b(a.shape(), testutil::to_vec(a));
  b[4] += 0.5;
  const TensorD v = variance_matrix(tape, a, b);
  for (std::size_t i = 0; i < 9; ++i) CHECK((v[i] > 1e-7) == (i == 4));

  CHECK_THROWS_AS(variance_matrix(tape, TensorD({1, 2, 2}), TensorD({1, 3, 3})), Error);
}

TEST_CASE("channel weight examples") {
  TapeD tape;
  BasicParamStore<double> store;
  auto head = make_head(store, 2, 1);

  for (double w : testutil::to_vec(channel_weights(tape, TensorD({3, 2, 2}), head))) CHECK(w == 0.5);

  std::fill(head.weight.data().begin(), head.weight.data().end(), 0.0);
  head.bias[0] = 10.0;
  for (double w : testutil::to_vec(channel_weights(tape, random_tensor<double>({2, 2, 2}, 4), head))) {
    CHECK(w == doctest::Approx(0.99995).epsilon(1e-5));
  }

  head.weight[0] = 1.0;
  head.weight[1] = 1.0;
  head.bias[0] = 0.0;
  const auto w = testutil::to_vec(channel_weights(tape, TensorD({1, 2, 2}, std::vector<double>{1, 0, 0, 0}), head));
  CHECK(w[0] == doctest::Approx(sigmoid_oracle(1.0)).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(w[1] == 0.5);

  CHECK_THROWS_AS(channel_weights(tape, TensorD({1, 3, 3}), head), Error);

  // Strictly inside (0,1) for moderate finite inputs.
  BasicParamStore<float> fs;
  Rng rng(2);
  auto fh = create_attention_head(fs, "a", 8, rng);
  Tape ft;
  for (float x : testutil::to_vec(channel_weights(ft, random_tensor<float>({4, 8, 8}, 9, -5, 5), fh))) {
    CHECK(x > 0.0f);
    CHECK(x < 1.0f);
  }
}

TEST_CASE("reweigh examples") {
  TapeD tape;
  const TensorD f = random_tensor<double>({2, 3, 4, 4}, 5);
  CHECK(testutil::to_vec(reweigh(tape, f, TensorD({2, 3}, 1.0))) == testutil::to_vec(f));
  CHECK(testutil::to_vec(reweigh(tape, f, TensorD({2, 3}))) == std::vector<double>(f.numel(), 0.0));
  const TensorD one = random_tensor<double>({1, 1, 3, 3}, 6);
  const auto half = testutil::to_vec(reweigh(tape, one, TensorD({1, 1}, 0.5)));
  for (std::size_t i = 0; i < 9; ++i) CHECK(half[i] == 0.5 * one[i]);
  CHECK_THROWS_AS(reweigh(tape, f, TensorD({2, 2})), Error);
}

TEST_CASE("attention chain gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (bool centered : {false, true}) {
      BasicParamStore<double> store;
      auto head = make_head(store, 4, seed);
      head.bias[0] = 0.3;
      TensorD f = random_tensor<double>({2, 4, 3, 3}, seed + 10);
      TensorD fp = random_tensor<double>({2, 4, 3, 3}, seed + 20);
      const TensorD r = random_tensor<double>({2, 4, 3, 3}, seed + 30);
      auto loss = [&](TapeD& tape) {
        const auto v = variance_matrix(tape, covariance(tape, f, centered), covariance(tape, fp, centered));
        const auto w = channel_weights(tape, v, head);
        return ops::sum(tape, ops::mul(tape, reweigh(tape, f, w), r));
      };
      const auto res = grad_check<double>(loss, {f, fp, head.weight, head.bias}, 1e-6);
      CHECK(res.max_relative_error < 1e-3);
    }
  }
}

TEST_CASE("matrix export") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "stainlab_test_matrix";
  fs::remove_all(dir);
  fs::create_directories(dir);
  TapeD tape;
  const TensorD m({2, 2, 2}, std::vector<double>{1, 2, 3, 4, 3, 4, 5, 6});
  const auto mean = batch_mean_matrix(m);
  CHECK(mean == std::vector<double>{2, 3, 4, 5});
  write_matrix_csv(dir / "m.csv", mean, 2);
  std::ifstream in(dir / "m.csv");
  std::string line1, line2;
  std::getline(in, line1);
  std::getline(in, line2);
  CHECK(line1 == "2,3");
  CHECK(line2 == "4,5");
  write_matrix_heatmap(dir / "m.png", mean, 2);
  CHECK(fs::file_size(dir / "m.png") > 0);
  CHECK_THROWS_AS(write_matrix_csv(dir / "bad.csv", mean, 3), Error);
  fs::remove_all(dir);
}
