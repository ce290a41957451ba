#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gist/error.hpp"
#include "gist/matrix.hpp"
#include "gist/numeric.hpp"
#include "gist/rng.hpp"

using namespace gist;

TEST(LogSumExp, KnownValue) {
  const Vector v{1.0, 2.0, 3.0};
  EXPECT_NEAR(log_sum_exp(v), 3.40760596444438, 1e-12);
}

TEST(LogSumExp, StableForLargeInputs) {
  const Vector v{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-9);
  const Vector w{-1000.0, -1000.0};
  EXPECT_NEAR(log_sum_exp(w), -1000.0 + std::log(2.0), 1e-9);
}

TEST(LogSumExp, EmptyIsContractError) {
  EXPECT_THROW(log_sum_exp(Vector{}), ContractError);
}

TEST(Softmax, SumsToOneAndOrders) {
  Vector v{1.0, 2.0, 3.0};
  softmax_inplace(v);
  EXPECT_NEAR(v[0] + v[1] + v[2], 1.0, 1e-15);
  EXPECT_LT(v[0], v[1]);
  EXPECT_LT(v[1], v[2]);
  EXPECT_NEAR(v[2], std::exp(3.0 - 3.40760596444438), 1e-12);
}

TEST(Cosine, KnownValueAndScale) {
  const Vector a{1.0, 2.0}, b{2.0, 1.0};
  EXPECT_NEAR(cosine(a, b), 0.8, 1e-15);
  const Vector a3{3.0, 6.0};
  EXPECT_NEAR(cosine(a3, b), 0.8, 1e-15);
}

TEST(Cosine, ZeroVectorIsDegenerate) {
  const Vector a{0.0, 0.0}, b{1.0, 0.0};
  EXPECT_THROW(cosine(a, b), DegenerateInputError);
}

TEST(FiniteDiff, QuadraticGradient) {
  const ScalarFunction f = [](std::span<const double> x) {
    return x[0] * x[0] + 3.0 * x[0] * x[1] - x[1];
  };
  const Vector x{0.5, -2.0};
  const auto g = finite_diff_grad(f, x);
  EXPECT_NEAR(g[0], 2.0 * 0.5 + 3.0 * -2.0, 1e-8);
  EXPECT_NEAR(g[1], 3.0 * 0.5 - 1.0, 1e-8);
}

TEST(FiniteDiff, NonFiniteEvaluationDiverges) {
  const ScalarFunction f = [](std::span<const double> x) { return std::log(x[0]); };
  const Vector x{1e-6};
  EXPECT_THROW(finite_diff_grad(f, x, 1e-5), DivergenceError);
}

TEST(ApproxEqual, AbsoluteAndRelative) {
  EXPECT_TRUE(approx_equal(1.0, 1.0 + 1e-7, 1e-6, 0.0));
  EXPECT_FALSE(approx_equal(1.0, 1.0 + 1e-5, 1e-6, 0.0));
  EXPECT_TRUE(approx_equal(1e6, 1e6 + 1.0, 0.0, 1e-5));
}

TEST(RandomOrthogonal, IsOrthogonal) {
  Rng rng(3);
  for (std::size_t n : {1u, 2u, 7u, 16u}) {
    const auto q = random_orthogonal(n, rng);
    const auto qtq = matmul_tn(q, q);
    const auto eye = identity(n);
    for (std::size_t i = 0; i < qtq.size(); ++i)
      EXPECT_NEAR(qtq.data()[i], eye.data()[i], 1e-12);
  }
}

TEST(RandomDirection, HasRequestedNorm) {
  Rng rng(5);
  const auto v = random_direction(9, 2.5, rng);
  EXPECT_NEAR(norm(v), 2.5, 1e-12);
}

TEST(Matrix, ProductsAgree) {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  const Matrix b{{1, 0}, {0, 1}, {2, -1}};
  const auto ab = matmul(a, b);
  EXPECT_EQ(ab, (Matrix{{7, -1}, {16, -1}}));
  EXPECT_EQ(matmul_nt(a, b.transpose()), ab);
  EXPECT_EQ(matmul_tn(a.transpose(), b), ab);
}

TEST(Matrix, BitwiseEqualSeesSignedZero) {
  const Matrix a{{0.0}}, b{{-0.0}};
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(bitwise_equal(a, b));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const Matrix c{{nan}};
  EXPECT_FALSE(c == c);
  EXPECT_TRUE(bitwise_equal(c, c));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, SplitIsIndependentOfParentPosition) {
  Rng a(9);
  const auto s1 = a.split(4);
  a.next_u64();
  EXPECT_EQ(a.split(4), s1);
  EXPECT_NE(a.split(5), s1);
}

TEST(Rng, FromStateResumes) {
  Rng a(17);
  for (int i = 0; i < 10; ++i) a.next_u64();
  auto b = Rng::from_state(a.state(), a.seed());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowAndUniformRanges) {
  Rng rng(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, NormalMoments) {
  Rng rng(2);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}
