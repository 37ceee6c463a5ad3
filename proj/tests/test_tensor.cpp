#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gaisnet/grad_check.hpp"
#include "gaisnet/tensor.hpp"

using namespace gaisnet;

namespace {

Mat random_mat(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Schoolbook product, independent of Eigen's kernels.
Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

double weighted_sum(const Mat& y, const Mat& w) { return (y.array() * w.array()).sum(); }

}  // namespace

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 5, k = 1 + (trial * 3) % 7, m = 1 + (trial * 5) % 6;
    Mat a = random_mat(rng, n, k), b = random_mat(rng, k, m);
    EXPECT_LE((matmul(a, b) - naive_matmul(a, b)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((matmul_nt(a, Mat(b.transpose())) - naive_matmul(a, b)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((matmul_tn(Mat(a.transpose()), b) - naive_matmul(a, b)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Mat(2, 3), Mat(4, 2)), ShapeError);
  EXPECT_THROW(matmul_nt(Mat(2, 3), Mat(4, 2)), ShapeError);
  EXPECT_THROW(matmul_tn(Mat(2, 3), Mat(4, 2)), ShapeError);
}

TEST(Matmul, CountsMultiplyAdds) {
  MacScope scope;
  matmul<double>(Mat::Ones(3, 4), Mat::Ones(4, 5));
  matmul_nt<double>(Mat::Ones(2, 6), Mat::Ones(7, 6));
  EXPECT_EQ(scope.count(), 3u * 4 * 5 + 2u * 6 * 7);
}

TEST(Softmax, KnownRow) {
  Mat x(1, 2);
  x << 0.0, std::log(3.0);
  Mat y = row_softmax(x);
  EXPECT_NEAR(y(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(y(0, 1), 0.75, 1e-15);
}

TEST(Softmax, StableForLargeInputs) {
  Mat x(1, 3);
  x << 1000.0, 1001.0, 999.0;
  Mat y = row_softmax(x);
  EXPECT_TRUE(all_finite(y));
  EXPECT_NEAR(y.sum(), 1.0, 1e-14);
}

TEST(LayerNorm, KnownRow) {
  Mat x(1, 2);
  x << 1.0, 3.0;
  Mat y = layer_norm<double>(x, Mat::Ones(1, 2), Mat::Zero(1, 2), 1e-5);
  const double v = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), -v, 1e-15);
  EXPECT_NEAR(y(0, 1), v, 1e-15);
}

TEST(Gelu, KnownValues) {
  Mat x(1, 3);
  x << 0.0, 1.0, -1.0;
  Mat y = gelu(x);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_NEAR(y(0, 1), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(y(0, 2), -0.15865525393145707, 1e-15);
}

TEST(Attention, UniformWhenKeysEqual) {
  Mat q = Mat::Random(3, 4), k = Mat::Ones(5, 4), v(5, 2);
  v << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  AttentionCache<double> cache;
  Mat out = attention(q, k, v, &cache);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(out(i, 0), 5.0, 1e-12);
    EXPECT_NEAR(out(i, 1), 6.0, 1e-12);
  }
}

// Random-trial finite-difference checks of every hand-written backward kernel.
class KernelGrad : public ::testing::TestWithParam<int> {};

TEST_P(KernelGrad, SoftmaxLayerNormGeluAttention) {
  std::mt19937_64 rng(100 + GetParam());
  const int r = 1 + GetParam() % 4, c = 2 + GetParam() % 5;
  const double eps = 1e-5, tol = 1e-4;
  Mat w = random_mat(rng, r, c);
  Mat x = random_mat(rng, r, c);

  auto sm = [&](const Mat& in) { return weighted_sum(row_softmax(in), w); };
  auto sm_grad = [&](const Mat& in) { return row_softmax_backward(row_softmax(in), w); };
  EXPECT_LT(fd_check<double>(sm, sm_grad, x, eps), tol);

  Mat gamma = random_mat(rng, 1, c), beta = random_mat(rng, 1, c);
  auto ln = [&](const Mat& in) { return weighted_sum(layer_norm(in, gamma, beta, 1e-5), w); };
  auto ln_grad = [&](const Mat& in) {
    LayerNormCache<double> cache;
    layer_norm(in, gamma, beta, 1e-5, &cache);
    return layer_norm_backward<double>(cache, gamma, w, nullptr, nullptr);
  };
  EXPECT_LT(fd_check<double>(ln, ln_grad, x, eps), tol);
  auto ln_gamma = [&](const Mat& g) { return weighted_sum(layer_norm(x, g, beta, 1e-5), w); };
  auto ln_gamma_grad = [&](const Mat& g) {
    LayerNormCache<double> cache;
    layer_norm(x, g, beta, 1e-5, &cache);
    Mat dg = Mat::Zero(1, c), db = Mat::Zero(1, c);
    layer_norm_backward<double>(cache, g, w, &dg, &db);
    return dg;
  };
  EXPECT_LT(fd_check<double>(ln_gamma, ln_gamma_grad, gamma, eps), tol);

  auto ge = [&](const Mat& in) { return weighted_sum(gelu(in), w); };
  auto ge_grad = [&](const Mat& in) { return gelu_backward(in, w); };
  EXPECT_LT(fd_check<double>(ge, ge_grad, x, eps), tol);

  const int nk = 1 + GetParam() % 3;
  Mat q = random_mat(rng, r, c), k = random_mat(rng, nk, c), v = random_mat(rng, nk, c);
  auto at_grads = [&](const Mat& qq, const Mat& kk, const Mat& vv) {
    AttentionCache<double> cache;
    attention(qq, kk, vv, &cache);
    return attention_backward(cache, w);
  };
  auto fq = [&](const Mat& in) { return weighted_sum(attention(in, k, v), w); };
  auto fk = [&](const Mat& in) { return weighted_sum(attention(q, in, v), w); };
  auto fv = [&](const Mat& in) { return weighted_sum(attention(q, k, in), w); };
  EXPECT_LT(fd_check<double>(fq, [&](const Mat& in) { return at_grads(in, k, v).dq; }, q, eps), tol);
  EXPECT_LT(fd_check<double>(fk, [&](const Mat& in) { return at_grads(q, in, v).dk; }, k, eps), tol);
  EXPECT_LT(fd_check<double>(fv, [&](const Mat& in) { return at_grads(q, k, in).dv; }, v, eps), tol);
}

INSTANTIATE_TEST_SUITE_P(HundredTrials, KernelGrad, ::testing::Range(0, 100));

TEST(Softmax, RowsSumToOneAtLargeMagnitude) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  Mat x(50, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  Mat y = row_softmax(x);
  for (Eigen::Index r = 0; r < y.rows(); ++r) EXPECT_NEAR(y.row(r).sum(), 1.0, 1e-12);
}

TEST(GradCheck, Quadratic) {
  auto f = [](const Mat& x) { return x.array().square().sum(); };
  auto g = [](const Mat& x) { return Mat(2.0 * x); };
  Mat x = Mat::Constant(1, 1, 3.0);
  EXPECT_LT(fd_check<double>(f, g, x, 1e-5), 1e-8);
}

TEST(GradCheck, RejectsBadEps) {
  auto f = [](const Mat& x) { return x.sum(); };
  auto g = [](const Mat& x) { return Mat(Mat::Ones(x.rows(), x.cols())); };
  Mat x = Mat::Zero(1, 1);
  EXPECT_THROW(fd_check<double>(f, g, x, 0.0), std::invalid_argument);
  EXPECT_THROW(fd_check<double>(f, g, x, 0.1), std::invalid_argument);
  EXPECT_NO_THROW(fd_check<double>(f, g, x, 1e-2));
}

TEST(GradCheck, FlagsWrongGradient) {
  auto f = [](const Mat& x) { return x.array().square().sum(); };
  auto wrong = [](const Mat& x) { return Mat(3.0 * x); };
  Mat x = Mat::Constant(2, 2, 0.5);
  EXPECT_GT(fd_check<double>(f, wrong, x, 1e-5), 0.3);
}

TEST(GradCheck, NonFiniteThrows) {
  auto f = [](const Mat& x) { return std::log(x(0, 0)); };
  auto g = [](const Mat& x) { return Mat(Mat::Constant(1, 1, 1.0 / x(0, 0))); };
  Mat x = Mat::Constant(1, 1, -1.0);
  EXPECT_THROW(fd_check<double>(f, g, x, 1e-5), NumericError);
}

TEST(Tensor, FloatInstantiation) {
  Tensor<float> a = Tensor<float>::Ones(2, 2);
  Tensor<float> y = row_softmax<float>(matmul(a, a));
  EXPECT_FLOAT_EQ(y(0, 0), 0.5f);
}
