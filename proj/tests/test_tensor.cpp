#include <gtest/gtest.h>

#include <cmath>

#include "primitive_catalog.hpp"
#include "samamba/ops.hpp"
#include "samamba/parallel.hpp"

using namespace samamba;
using samamba::testing::random_tensor;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a.at(i * k + p) * b.at(p * n + j);
  return out;
}

// Direct six-deep loop over output voxels and kernel taps.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  std::size_t B = x.dim(0), Ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  std::size_t Co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  std::size_t Od = (D + 2 * pad - kd) / stride + 1, Oh = (H + 2 * pad - kh) / stride + 1, Ow = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(B * Co * Od * Oh * Ow, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t z = 0; z < Od; ++z)
        for (std::size_t y = 0; y < Oh; ++y)
          for (std::size_t xx = 0; xx < Ow; ++xx) {
            double acc = 0.0;
            for (std::size_t c = 0; c < Ci; ++c)
              for (std::size_t a = 0; a < kd; ++a)
                for (std::size_t bb = 0; bb < kh; ++bb)
                  for (std::size_t cc = 0; cc < kw; ++cc) {
                    long iz = static_cast<long>(z * stride + a) - static_cast<long>(pad);
                    long iy = static_cast<long>(y * stride + bb) - static_cast<long>(pad);
                    long ix = static_cast<long>(xx * stride + cc) - static_cast<long>(pad);
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= (long)D || iy >= (long)H || ix >= (long)W) continue;
                    acc += w.at((((o * Ci + c) * kd + a) * kh + bb) * kw + cc) *
                           x.at((((b * Ci + c) * D + iz) * H + iy) * W + ix);
                  }
            out[(((b * Co + o) * Od + z) * Oh + y) * Ow + xx] = acc;
          }
  return out;
}

}  // namespace

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::zeros({2, 3}, true);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(Matmul, IdentityAndClosedForm) {
  std::mt19937_64 rng(1);
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b = random_tensor({3, 4}, rng);
  Tensor p = matmul(eye, b);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(p.at(i), b.at(i));
  Tensor r = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(r.item(), 11.0);
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
  auto ref = naive_matmul(a, b);
  Tensor p = matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(p.at(i), ref[i], 1e-12);
}

TEST(Conv3d, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({1, 1, 3, 4, 5}, rng);
  Tensor y = conv3d(x, Tensor::from({1, 1, 1, 1, 1}, {1.0}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv3d, OnesKernelSumsToEight) {
  Tensor y = conv3d(Tensor::full({1, 1, 2, 2, 2}, 1.0), Tensor::full({1, 1, 2, 2, 2}, 1.0));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y.item(), 8.0);
}

TEST(Conv3d, KernelLargerThanPaddedInputThrows) {
  EXPECT_THROW(conv3d(Tensor::zeros({1, 1, 2, 2, 2}), Tensor::zeros({1, 1, 5, 1, 1}), 1, 1), DimensionError);
}

TEST(Conv3d, ExhaustiveAgainstLoopOracle) {
  std::mt19937_64 rng(3);
  std::size_t cases = 0;
  for (std::size_t B = 1; B <= 2; ++B)
    for (std::size_t C = 1; C <= 3; ++C)
      for (std::size_t D = 1; D <= 4; ++D)
        for (std::size_t H = 1; H <= 5; ++H)
          for (std::size_t W = 1; W <= 6; ++W)
            for (std::size_t k = 1; k <= 3; ++k)
              for (std::size_t stride = 1; stride <= 2; ++stride)
                for (std::size_t pad = 0; pad <= 1; ++pad) {
                  if (k > D + 2 * pad || k > H + 2 * pad || k > W + 2 * pad) continue;
                  Tensor x = random_tensor({B, C, D, H, W}, rng, -1, 1, false);
                  Tensor w = random_tensor({2, C, k, k, k}, rng, -1, 1, false);
                  auto ref = naive_conv(x, w, stride, pad);
                  Tensor y = conv3d(x, w, stride, pad);
                  ASSERT_EQ(y.size(), ref.size());
                  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y.at(i), ref[i], 1e-10);
                  ++cases;
                }
  EXPECT_GT(cases, 5000u);
}

TEST(Softmax, SymmetryOverflowClosedForm) {
  Tensor a = softmax(Tensor::from({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(a.at(0), 0.5);
  Tensor b = softmax(Tensor::from({2}, {1000, 1000}), 0);
  EXPECT_DOUBLE_EQ(b.at(0), 0.5);
  EXPECT_DOUBLE_EQ(b.at(1), 0.5);
  Tensor c = softmax(Tensor::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
  EXPECT_NEAR(c.at(0), 1.0 / 6, 1e-15);
  EXPECT_NEAR(c.at(1), 2.0 / 6, 1e-15);
  EXPECT_NEAR(c.at(2), 3.0 / 6, 1e-15);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({3, 7}, rng, -5, 5, false);
  Tensor p = softmax(x, 1);
  Tensor q = softmax(add_scalar(x, 123.0), 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GT(p.at(r * 7 + j), 0.0);
      EXPECT_NEAR(p.at(r * 7 + j), q.at(r * 7 + j), 1e-12);
      s += p.at(r * 7 + j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, Examples) {
  Tensor one = Tensor::full({4}, 1.0), zero = Tensor::zeros({4});
  Tensor c = layer_norm(Tensor::full({1, 4}, 3.5), one, zero);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
  Tensor pair = layer_norm(Tensor::from({1, 2}, {1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-5);
  EXPECT_NEAR(pair.at(0), 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(pair.at(1), -1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  std::mt19937_64 rng(5);
  Tensor r = layer_norm(random_tensor({1, 16}, rng, -4, 9, false), Tensor::full({16}, 1.0), Tensor::zeros({16}));
  double mean = 0.0;
  for (double v : r.data()) mean += v;
  EXPECT_LT(std::fabs(mean / 16), 1e-12);
}

TEST(Attention, SingleTokenAndUniformScores) {
  std::mt19937_64 rng(6);
  Tensor q = random_tensor({1, 4}, rng), k = random_tensor({1, 4}, rng), v = random_tensor({1, 4}, rng);
  Tensor o = attention(q, k, v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(o.at(i), v.at(i), 1e-15);

  Tensor q0 = Tensor::zeros({3, 4});
  Tensor v3 = random_tensor({3, 4}, rng);
  Tensor u = attention(q0, random_tensor({3, 4}, rng), v3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 4; ++j) {
      double mean = (v3.at(j) + v3.at(4 + j) + v3.at(8 + j)) / 3.0;
      EXPECT_NEAR(u.at(r * 4 + j), mean, 1e-15);
    }
}

TEST(Attention, MatchesExplicitFormula) {
  std::mt19937_64 rng(8);
  Tensor q = random_tensor({3, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 4}, rng);
  Tensor o = attention(q, k, v);
  for (std::size_t i = 0; i < 3; ++i) {
    double s[3], mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      s[j] = 0.0;
      for (std::size_t p = 0; p < 4; ++p) s[j] += q.at(i * 4 + p) * k.at(j * 4 + p);
      s[j] /= 2.0;
      mx = std::max(mx, s[j]);
    }
    for (double& e : s) {
      e = std::exp(e - mx);
      z += e;
    }
    for (std::size_t p = 0; p < 4; ++p) {
      double ref = 0.0;
      for (std::size_t j = 0; j < 3; ++j) ref += s[j] / z * v.at(j * 4 + p);
      EXPECT_NEAR(o.at(i * 4 + p), ref, 1e-12);
    }
  }
}

TEST(Backward, ClosedForms) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  Tensor z = Tensor::scalar(0.0, true);
  backward(sigmoid(z));
  EXPECT_DOUBLE_EQ(z.grad()[0], 0.25);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tensor x = Tensor::zeros({2}, true);
  EXPECT_THROW(backward(add_scalar(x, 1.0)), ContractError);
}

TEST(Backward, UnreachedLeafHasZeroGradient) {
  Tensor a = Tensor::scalar(2.0, true), unused = Tensor::from({3}, {1, 2, 3}, true);
  backward(mul(a, a));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = mul(x, x);
  backward(add(y, y));  // d(2x^2)/dx = 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Backward, DeterministicGradients) {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tensor x = random_tensor({1, 2, 4, 4, 4}, rng), w = random_tensor({3, 2, 3, 3, 3}, rng);
    backward(sum_all(gelu(conv3d(x, w, 1, 1))));
    std::vector<double> g(w.grad().begin(), w.grad().end());
    g.insert(g.end(), x.grad().begin(), x.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Primitives, NonFiniteOutputIsAnError) {
  EXPECT_THROW(log(Tensor::from({1}, {0.0})), NumericError);
  EXPECT_THROW(exp(Tensor::from({1}, {1e6})), NumericError);
}

TEST(Primitives, FiniteDifferenceGradients) {
  auto catalog = samamba::testing::primitive_catalog();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (auto& build : catalog) {
      std::mt19937_64 rng(1000 + seed);
      auto pc = build(rng);
      auto rep = samamba::testing::gradcheck(pc.fn, pc.inputs, seed);
      EXPECT_LT(rep.max_rel_error, 1e-6) << pc.name << " seed " << seed;
    }
  }
}

TEST(Parallel, WorkerCountDoesNotChangeResults) {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({2, 3, 6, 5, 4}, rng), w = random_tensor({4, 3, 3, 3, 3}, rng);
  auto run = [&](std::size_t threads) {
    set_thread_count(threads);
    x.zero_grad();
    w.zero_grad();
    Tensor y = conv3d(x, w, 1, 1);
    backward(sum_all(mul(y, y)));
    std::vector<double> r(y.data().begin(), y.data().end());
    r.insert(r.end(), w.grad().begin(), w.grad().end());
    r.insert(r.end(), x.grad().begin(), x.grad().end());
    return r;
  };
  auto one = run(1), four = run(4);
  set_thread_count(1);
  ASSERT_EQ(one.size(), four.size());
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(one[i], four[i], 1e-12);
}

TEST(Dropout, EvalIsIdentityAndTrainIsSeeded) {
  std::mt19937_64 a(3), b(3);
  Tensor x = Tensor::full({100}, 1.0);
  Tensor e = dropout(x, 0.1, false, a);
  EXPECT_EQ(e.id(), x.id());
  Tensor t1 = dropout(x, 0.5, true, a), t2 = dropout(x, 0.5, true, b);
  // a was not advanced by the eval call, so both masks match.
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(t1.at(i), t2.at(i));
}

TEST(Upsample, TrilinearOfConstantIsConstant) {
  Tensor x = Tensor::full({1, 2, 2, 3, 2}, 0.7);
  Tensor y = upsample_trilinear(x, {5, 6, 4});
  for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-15);
}
