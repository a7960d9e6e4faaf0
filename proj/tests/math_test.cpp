#include "kvprune/math.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "kvprune/rng.hpp"

namespace {

using kvprune::dot;
using kvprune::InvalidInput;
using kvprune::lp_norm;
using kvprune::Mat64;
using kvprune::matvec;
using kvprune::NormOrder;
using kvprune::stable_softmax;
using kvprune::Vec64;
using kvprune::Xorshift64Star;

Vec64 random_vec(Xorshift64Star& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.next_symmetric();
  return Vec64(std::move(v));
}

TEST(Vec64, RejectsNonFiniteAtConstruction) {
  EXPECT_THROW(Vec64({1.0, std::nan(""), 2.0}), InvalidInput);
  EXPECT_THROW(Vec64({std::numeric_limits<double>::infinity()}), InvalidInput);
  EXPECT_NO_THROW(Vec64({0.0, -1.5, 1e300}));
}

TEST(Mat64, ShapeAndFiniteChecks) {
  EXPECT_THROW(Mat64(2, 2, {1.0, 2.0, 3.0}), InvalidInput);
  EXPECT_THROW(Mat64(1, 2, {1.0, std::nan("")}), InvalidInput);
  Mat64 m(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.at(1, 2), 6.0);
}

TEST(LpNorm, KnownValues) {
  EXPECT_DOUBLE_EQ(lp_norm(Vec64({1, -2, 3}), NormOrder::l1), 6.0);
  EXPECT_DOUBLE_EQ(lp_norm(Vec64({3, 4}), NormOrder::l2), 5.0);
  EXPECT_DOUBLE_EQ(lp_norm(Vec64({0, 0, 0}), NormOrder::linf), 0.0);
  EXPECT_THROW(lp_norm(Vec64(), NormOrder::l1), InvalidInput);
}

TEST(LpNorm, ZeroIffZeroVector) {
  for (NormOrder p : {NormOrder::l1, NormOrder::l2, NormOrder::linf}) {
    EXPECT_EQ(lp_norm(Vec64::zeros(5), p), 0.0);
    EXPECT_GT(lp_norm(Vec64({0, 0, 1e-150}), p), 0.0);
  }
}

// Absolute homogeneity: ||c v|| = c ||v|| for c > 0, within 1e-12 relative.
TEST(LpNorm, Homogeneity) {
  Xorshift64Star rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.next_u64() % 16;
    Vec64 v = random_vec(rng, n, 3.0);
    double c = 0.01 + 10.0 * rng.next_unit();
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) scaled[i] = c * v[i];
    for (NormOrder p : {NormOrder::l1, NormOrder::l2, NormOrder::linf}) {
      double lhs = lp_norm(Vec64(scaled), p);
      double rhs = c * lp_norm(v, p);
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::fabs(rhs)));
    }
  }
}

TEST(LpNorm, OrderingInfLe2Le1) {
  Xorshift64Star rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    Vec64 v = random_vec(rng, 1 + rng.next_u64() % 24, 5.0);
    double n1 = lp_norm(v, NormOrder::l1);
    double n2 = lp_norm(v, NormOrder::l2);
    double ni = lp_norm(v, NormOrder::linf);
    EXPECT_LE(ni, n2 * (1 + 1e-15));
    EXPECT_LE(n2, n1 * (1 + 1e-15));
  }
}

TEST(StableSoftmax, KnownValues) {
  Vec64 sym = stable_softmax(Vec64({0, 0}));
  EXPECT_DOUBLE_EQ(sym[0], 0.5);
  EXPECT_DOUBLE_EQ(sym[1], 0.5);
  for (double c : {-700.0, 0.0, 3.5, 700.0}) {
    Vec64 single = stable_softmax(Vec64({c}));
    ASSERT_EQ(single.size(), 1u);
    EXPECT_DOUBLE_EQ(single[0], 1.0);
  }
  EXPECT_THROW(stable_softmax(Vec64()), InvalidInput);
}

// Independent high-precision oracle: evaluate exp/sum in long double.
TEST(StableSoftmax, MatchesLongDoubleReference) {
  Vec64 probs = stable_softmax(Vec64({1, 2, 3}));
  std::vector<double> logits = {1, 2, 3};
  long double sum = 0.0L;
  for (double x : logits) sum += expl(static_cast<long double>(x));
  for (std::size_t i = 0; i < logits.size(); ++i) {
    long double expected = expl(static_cast<long double>(logits[i])) / sum;
    EXPECT_NEAR(probs[i], static_cast<double>(expected), 1e-15);
  }
}

TEST(StableSoftmax, SumsToOneAndPositive) {
  Xorshift64Star rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    Vec64 logits = random_vec(rng, 1 + rng.next_u64() % 32, 50.0);
    Vec64 p = stable_softmax(logits);
    double sum = 0.0;
    for (double x : p) {
      EXPECT_GT(x, 0.0);
      EXPECT_LE(x, 1.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(StableSoftmax, ShiftInvariance) {
  Xorshift64Star rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.next_u64() % 16;
    Vec64 logits = random_vec(rng, n, 10.0);
    double c = 1000.0 * rng.next_symmetric();
    std::vector<double> shifted(n);
    for (std::size_t i = 0; i < n; ++i) shifted[i] = logits[i] + c;
    Vec64 a = stable_softmax(logits);
    Vec64 b = stable_softmax(Vec64(shifted));
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(MatVec, IdentityAndZero) {
  Vec64 v({1, 2, 3});
  EXPECT_EQ(matvec(Mat64::identity(3), v), v);
  EXPECT_EQ(matvec(Mat64::zeros(2, 3), v), Vec64::zeros(2));
  EXPECT_THROW(matvec(Mat64::zeros(2, 4), v), InvalidInput);
}

// Brute-force oracle: naive triple loop over an explicit element grid.
TEST(MatVec, MatchesNaiveLoop) {
  Xorshift64Star rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t rows = 1 + rng.next_u64() % 6;
    std::size_t cols = 1 + rng.next_u64() % 6;
    std::vector<double> data(rows * cols);
    for (auto& x : data) x = rng.next_symmetric();
    Mat64 m(rows, cols, data);
    Vec64 v = random_vec(rng, cols);

    Vec64 got = matvec(m, v);
    for (std::size_t r = 0; r < rows; ++r) {
      double expected = 0.0;
      for (std::size_t c = 0; c < cols; ++c) expected += data[r * cols + c] * v[c];
      EXPECT_DOUBLE_EQ(got[r], expected);
    }
  }
}

TEST(Dot, KnownAndOracle) {
  EXPECT_DOUBLE_EQ(dot(Vec64({1, 0}), Vec64({0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(dot(Vec64({2, 3}), Vec64({2, 3})), 13.0);
  EXPECT_THROW(dot(Vec64({1}), Vec64({1, 2})), InvalidInput);

  Xorshift64Star rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 1 + rng.next_u64() % 12;
    Vec64 a = random_vec(rng, n);
    Vec64 b = random_vec(rng, n);
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) expected += a[i] * b[i];
    EXPECT_DOUBLE_EQ(dot(a, b), expected);
  }
}

}  // namespace
