#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "volcnn/parallel.hpp"
#include "volcnn/tensor.hpp"

using namespace volcnn;
using volcnn::test::random_tensor;

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t.at({1, 2, 3}) = 7.f;
  EXPECT_EQ(t[23], 7.f);
  const std::size_t idx[] = {1, 0, 2};
  EXPECT_EQ(t.offset(idx), 14u);
  EXPECT_THROW(t.at({2, 0, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
  EXPECT_EQ(t.reshaped({24}).shape(), Shape{24});
}

TEST(Tensor, DefaultIsScalarZero) {
  Tensor<double> t;
  EXPECT_EQ(t.rank(), 0u);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], 0.0);
}

TEST(Tensor, ElementwiseRejectsMismatch) {
  Tensor<float> a({2, 3}), b({3, 2});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
  Tensor<float> c({2, 3}, 2.f);
  auto d = sub(scale(c, 3.f), add(c, 1.f));
  for (float v : d.data()) EXPECT_EQ(v, 3.f);
  axpy(a, 0.5f, c);
  for (float v : a.data()) EXPECT_EQ(v, 1.f);
}

TEST(Tensor, MatmulMatchesNaiveLoops) {
  Rng rng(11);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 3, 65}}) {
    auto a = random_tensor<double>({m, k}, rng);
    auto b = random_tensor<double>({k, n}, rng);
    auto c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{m, n}));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0;
        for (std::size_t p = 0; p < k; ++p) ref += a.at({i, p}) * b.at({p, j});
        EXPECT_NEAR(c.at({i, j}), ref, 1e-12);
      }
    }
  }
  EXPECT_THROW(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
}

TEST(Tensor, ReduceMatchesLoops) {
  Rng rng(3);
  auto x = random_tensor<double>({2, 3, 4}, rng);
  auto s = reduce(ReduceOp::kSum, x, {1});
  ASSERT_EQ(s.shape(), (Shape{2, 4}));
  auto mean = reduce(ReduceOp::kMean, x, {0, 2}, true);
  ASSERT_EQ(mean.shape(), (Shape{1, 3, 1}));
  auto mx = reduce_max(x, {2});
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double ref = 0;
      for (std::size_t j = 0; j < 3; ++j) ref += x.at({i, j, k});
      EXPECT_NEAR(s.at({i, k}), ref, 1e-12);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      double best = -1e9;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        if (x.at({i, j, k}) > best) best = x.at({i, j, k}), arg = k;
      }
      EXPECT_EQ(mx.values.at({i, j}), best);
      EXPECT_EQ(mx.argmax[i * 3 + j], arg);
    }
  }
  for (std::size_t j = 0; j < 3; ++j) {
    double ref = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k) ref += x.at({i, j, k});
    EXPECT_NEAR(mean.at({0, j, 0}), ref / 8, 1e-12);
  }
  EXPECT_EQ(reduce(ReduceOp::kSum, x, {}), x);
}

TEST(Tensor, ArgmaxTakesFirstMaximum) {
  Tensor<float> x({1, 4}, std::vector<float>{1, 3, 3, 2});
  auto a = reduce(ReduceOp::kArgmax, x, {1});
  EXPECT_EQ(a[0], 1.f);
}

TEST(Tensor, KaimingUniformBounds) {
  Rng rng(5);
  auto w = init<double>(InitKind::kKaimingUniform, {8, 4, 3, 3, 3}, rng);
  const double bound = std::sqrt(6.0 / (4 * 27));
  double lo = 1e9, hi = -1e9;
  for (double v : w.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_GE(lo, -bound);
  EXPECT_LE(hi, bound);
  EXPECT_LT(lo, -0.8 * bound);
  EXPECT_GT(hi, 0.8 * bound);
  auto z = init<float>(InitKind::kZeros, {3}, rng);
  auto o = init<float>(InitKind::kOnes, {3}, rng);
  EXPECT_EQ(z, Tensor<float>({3}, 0.f));
  EXPECT_EQ(o, Tensor<float>({3}, 1.f));
}

TEST(Rng, DeterministicAndSplitIndependentOfConsumption) {
  Rng a(42, 3), b(42, 3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42, 3);
  const auto child_before = c.split(9).next_u64();
  c.next_u64();
  EXPECT_EQ(c.split(9).next_u64(), child_before);
  EXPECT_NE(c.split(9).next_u64(), c.split(10).next_u64());
  EXPECT_NE(Rng(1).next_u64(), Rng(2).next_u64());
}

TEST(Rng, DistributionsInRange) {
  Rng rng(7);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Parallel, EveryIndexOnceForAnyThreadCount) {
  for (int threads : {1, 3}) {
    set_num_threads(threads);
    std::vector<int> hits(101, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  set_num_threads(1);
}
