#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "gradcheck.hpp"
#include "param_arithmetic.hpp"
#include "tiny_config.hpp"
#include "samamba/model.hpp"
#include "samamba/parallel.hpp"

using namespace samamba;
using samamba::testing::random_tensor;

namespace {

ModelConfig desk() { return desk_config().model; }

ModelConfig tiny() { return samamba::testing::tiny_model(); }

Tensor input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor(std::move(shape), rng, -1.0, 1.0, false);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void set_all(Tensor t, double v) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), v);
}

struct ScanCase {
  Tensor u, delta, A, B, C;
};

ScanCase random_scan(std::size_t T, std::size_t C, std::size_t N, std::mt19937_64& rng) {
  return {random_tensor({T, C}, rng), random_tensor({T, C}, rng, 0.01, 1.0), random_tensor({C, N}, rng, -2.0, -0.1),
          random_tensor({T, N}, rng), random_tensor({T, N}, rng)};
}

// Plain sequential recurrence.
std::vector<double> scan_oracle(const ScanCase& s) {
  const std::size_t T = s.u.dim(0), C = s.u.dim(1), N = s.A.dim(1);
  std::vector<double> h(C * N, 0.0), y(T * C, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      double dt = s.delta.at(t * C + c), acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double& hn = h[c * N + n];
        hn = std::exp(dt * s.A.at(c * N + n)) * hn + dt * s.B.at(t * N + n) * s.u.at(t * C + c);
        acc += s.C.at(t * N + n) * hn;
      }
      y[t * C + c] = acc;
    }
  return y;
}

// One-sided Jacobi SVD; returns singular values in descending order.
std::vector<double> singular_values(std::vector<double> a, std::size_t rows, std::size_t cols) {
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < cols; ++p)
      for (std::size_t q = p + 1; q < cols; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += a[i * cols + p] * a[i * cols + p];
          beta += a[i * cols + q] * a[i * cols + q];
          gamma += a[i * cols + p] * a[i * cols + q];
        }
        if (gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        double zeta = (beta - alpha) / (2 * gamma);
        double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
        double c = 1 / std::sqrt(1 + t * t), s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          double x = a[i * cols + p], y = a[i * cols + q];
          a[i * cols + p] = c * x - s * y;
          a[i * cols + q] = s * x + c * y;
        }
      }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double n = 0;
    for (std::size_t i = 0; i < rows; ++i) n += a[i * cols + j] * a[i * cols + j];
    sv[j] = std::sqrt(n);
  }
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

}  // namespace

// ---- SAM branch ------------------------------------------------------------

TEST(SamEmbed, QuartersTheGrid) {
  Model model(desk(), 1);
  Tensor t = model.sam().embed(input({1, 1, 32, 32, 32}, 1));
  EXPECT_EQ(t.shape(), (Shape{1, 64, 8, 8, 8}));
  Tensor big = model.sam().embed(Tensor::zeros({1, 1, 96, 96, 96}));
  EXPECT_EQ(big.shape(), (Shape{1, 64, 24, 24, 24}));
  EXPECT_THROW(model.sam().embed(Tensor::zeros({1, 1, 32, 30, 32})), ContractError);
}

TEST(SamEmbed, ConstantInputGivesIdenticalTokens) {
  Model model(desk(), 2);
  Tensor tok = to_tokens(model.sam().embed(Tensor::full({1, 1, 16, 16, 16}, 0.7)));
  for (std::size_t t = 1; t < tok.dim(0); ++t)
    for (std::size_t c = 0; c < tok.dim(1); ++c) ASSERT_EQ(tok.at(t * tok.dim(1) + c), tok.at(c));
}

TEST(Lora, ZeroUpProjectionGivesZeroUpdate) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({10, 16}, rng), a = random_tensor({16, 8}, rng), b = Tensor::zeros({8, 16});
  Tensor d = lora_delta(x, a, b, 16.0, 0.1, false, nullptr);
  for (double v : d.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lora, ScaleIsAlphaOverRank) {
  // x = e_0, A = e_0 e_0^T-like, B = e_0: the only path has unit weight.
  Tensor x = Tensor::from({1, 16}, std::vector<double>(16, 0.0));
  x.mutable_data()[0] = 1.0;
  Tensor a = Tensor::zeros({16, 8}), b = Tensor::zeros({8, 16});
  a.mutable_data()[0] = 1.0;
  b.mutable_data()[0] = 1.0;
  Tensor d = lora_delta(x, a, b, 16.0, 0.0, false, nullptr);
  EXPECT_EQ(d.at(0), 2.0);
}

TEST(Lora, EvalMatchesMatrixOracle) {
  std::mt19937_64 rng(4);
  const std::size_t T = 7, C = 12, r = 8;
  Tensor x = random_tensor({T, C}, rng), a = random_tensor({C, r}, rng), b = random_tensor({r, C}, rng);
  Tensor d = lora_delta(x, a, b, 16.0, 0.1, false, nullptr);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < C; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        double h = 0.0;
        for (std::size_t i = 0; i < C; ++i) h += x.at(t * C + i) * a.at(i * r + k);
        acc += h * b.at(k * C + j);
      }
      EXPECT_NEAR(d.at(t * C + j), 2.0 * acc, 1e-12);
    }
}

TEST(Lora, UpdateRankAtMostR) {
  std::mt19937_64 rng(5);
  const std::size_t C = 24, r = 8, rows = 60;
  Tensor x = random_tensor({rows, C}, rng), a = random_tensor({C, r}, rng), b = random_tensor({r, C}, rng);
  Tensor d = lora_delta(x, a, b, 16.0, 0.1, false, nullptr);
  auto sv = singular_values(values(d), rows, C);
  EXPECT_GT(sv[r - 1], 1e-3);
  EXPECT_LT(sv[r], 1e-10);
}

TEST(Lora, TrainingDropoutIsSeeded) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({20, 16}, rng), a = random_tensor({16, 8}, rng), b = random_tensor({8, 16}, rng);
  std::mt19937_64 s1(9), s2(9);
  Tensor d1 = lora_delta(x, a, b, 16.0, 0.5, true, &s1), d2 = lora_delta(x, a, b, 16.0, 0.5, true, &s2);
  EXPECT_EQ(values(d1), values(d2));
  EXPECT_NE(values(d1), values(lora_delta(x, a, b, 16.0, 0.5, false, nullptr)));
  EXPECT_THROW(lora_delta(x, a, b, 16.0, 0.5, true, nullptr), ContractError);
}

TEST(EarlyFuse, GateBehaviour) {
  Model model(desk(), 7);
  Tensor x = input({1, 1, 32, 32, 32}, 8);
  Tensor s0 = model.mamba().encode(x).s[0];
  Tensor lam = model.sam().early_lambda();
  EXPECT_EQ(lam.item(), 0.001);

  // Projection alone, via a unit gate.
  lam.mutable_data()[0] = 1.0;
  Tensor proj = sub(model.sam().early_fuse(x, s0), x);
  double proj_inf = 0.0;
  for (double v : proj.data()) proj_inf = std::max(proj_inf, std::abs(v));
  lam.mutable_data()[0] = 0.001;
  Tensor diff = sub(model.sam().early_fuse(x, s0), x);
  for (double v : diff.data()) EXPECT_LE(std::abs(v), 0.001 * proj_inf + 1e-15);

  lam.mutable_data()[0] = 0.0;
  EXPECT_EQ(values(model.sam().early_fuse(x, s0)), values(x));
  lam.mutable_data()[0] = 0.5;
  auto pos = values(model.sam().early_fuse(x, s0));
  lam.mutable_data()[0] = -0.5;
  EXPECT_EQ(values(model.sam().early_fuse(x, s0)), pos);
}

TEST(PositionalBias, Examples) {
  Tensor b = positional_bias(4, 5, 1.0, 8.0);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(b.at(c * 5), 0.0);
  EXPECT_NEAR(b.at(0 * 5 + 4), 0.70711, 1e-5);
  EXPECT_NEAR(b.at(4), std::sin(std::numbers::pi / 4), 1e-15);

  Tensor b1 = positional_bias(6, 10, 1.0, 3.0), b2 = positional_bias(6, 10, 2.0, 3.0);
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t z = 0; z < 5; ++z) EXPECT_NEAR(b2.at(c * 10 + z), b1.at(c * 10 + 2 * z), 1e-12);
  Tensor wide = positional_bias(64, 24, 3.7, 5.0);
  for (double v : wide.data()) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(positional_bias(4, 4, 1.0, 0.0), ConfigError);
}

TEST(Routing, SaturatedCases) {
  std::vector<double> ones(50, 1.0), zeros(50, 0.0);
  auto r1 = route_tokens(ones, 0.5);
  EXPECT_EQ(r1.full.size(), 50u);
  EXPECT_TRUE(r1.light.empty());
  auto r0 = route_tokens(zeros, 0.5);
  EXPECT_TRUE(r0.full.empty());
  EXPECT_EQ(r0.light.size(), 50u);
}

TEST(Routing, PartitionIsExactAndPermutationInvariant) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> m(97);
    for (auto& v : m) v = u(rng);
    auto r = route_tokens(m, 0.5);
    EXPECT_EQ(r.full.size() + r.light.size(), m.size());
    std::vector<int> seen(m.size(), 0);
    for (auto i : r.full) ++seen[i];
    for (auto i : r.light) ++seen[i];
    for (int s : seen) EXPECT_EQ(s, 1);

    std::vector<std::size_t> perm(m.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pm(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) pm[i] = m[perm[i]];
    auto rp = route_tokens(pm, 0.5);
    std::vector<std::size_t> mapped;
    for (auto i : rp.full) mapped.push_back(perm[i]);
    std::sort(mapped.begin(), mapped.end());
    EXPECT_EQ(mapped, r.full);
  }
}

TEST(Routing, ImportanceResampledToTokenGrid) {
  Tensor m = input({1, 1, 2, 2, 2}, 11);
  Tensor up = importance_to_tokens(m, {4, 4, 4});
  EXPECT_EQ(up.size(), 64u);
  EXPECT_EQ(up.at(0), m.at(0));
  EXPECT_EQ(up.at(63), m.at(7));
  Tensor fine = input({1, 1, 4, 4, 4}, 12);
  Tensor down = importance_to_tokens(fine, {2, 2, 2});
  double mean = 0.0;
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) mean += fine.at((z * 4 + y) * 4 + x) / 8.0;
  EXPECT_NEAR(down.at(0), mean, 1e-15);
  EXPECT_THROW(importance_to_tokens(m, {3, 3, 3}), DimensionError);
}

TEST(SamForward, TokenCountInvariantAcrossThresholds) {
  Model model(desk(), 13);
  Tensor x = input({1, 1, 32, 32, 32}, 14);
  NoGradGuard ng;
  for (double tau : {0.0, 0.5, 1.0}) {
    ForwardOptions opt;
    opt.route_threshold = tau;
    ForwardTrace tr;
    Tensor y = model.forward(x, opt, &tr);
    EXPECT_EQ(tr.full_tokens + tr.light_tokens, 512u);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 32, 32, 32}));
    EXPECT_EQ(values(model.forward(x, opt)), values(y));
    for (double v : y.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(SamForward, AdaptersAreInertAtInit) {
  Model model(desk(), 15);
  NoGradGuard ng;
  for (std::uint64_t s = 0; s < 2; ++s) {
    Tensor x = input({1, 1, 32, 32, 32}, 100 + s);
    ForwardOptions on, off;
    off.adapters = false;
    ForwardTrace a, b;
    EXPECT_EQ(values(model.forward(x, on, &a)), values(model.forward(x, off, &b)));
    for (std::size_t i = 0; i < a.sam_exports.size(); ++i)
      EXPECT_EQ(values(a.sam_exports[i]), values(b.sam_exports[i]));
  }
}

// ---- Mamba branch ----------------------------------------------------------

TEST(Scan, SingleStep) {
  std::mt19937_64 rng(20);
  auto s = random_scan(1, 3, 4, rng);
  Tensor y = selective_scan(s.u, s.delta, s.A, s.B, s.C);
  for (std::size_t c = 0; c < 3; ++c) {
    double expect = 0.0;
    for (std::size_t n = 0; n < 4; ++n) expect += s.C.at(n) * s.delta.at(c) * s.B.at(n) * s.u.at(c);
    EXPECT_NEAR(y.at(c), expect, 1e-15);
  }
}

TEST(Scan, ZeroTransitionIsMemoryless) {
  std::mt19937_64 rng(21);
  auto s = random_scan(9, 2, 3, rng);
  set_all(s.A, -1e4);  // exp(delta * A) underflows to exactly 0
  Tensor y = selective_scan(s.u, s.delta, s.A, s.B, s.C);
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t c = 0; c < 2; ++c) {
      double expect = 0.0;
      for (std::size_t n = 0; n < 3; ++n)
        expect += s.C.at(t * 3 + n) * s.delta.at(t * 2 + c) * s.B.at(t * 3 + n) * s.u.at(t * 2 + c);
      EXPECT_NEAR(y.at(t * 2 + c), expect, 1e-15);
    }
}

TEST(Scan, MatchesSequentialOracle) {
  std::mt19937_64 rng(22);
  auto s = random_scan(17, 5, 4, rng);
  auto y = values(selective_scan(s.u, s.delta, s.A, s.B, s.C));
  auto o = scan_oracle(s);
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(y[i], o[i], 1e-10);
}

TEST(Scan, LinearInInput) {
  std::mt19937_64 rng(23);
  auto s = random_scan(30, 4, 3, rng);
  Tensor u2 = random_tensor({30, 4}, rng, -1, 1, false);
  auto y1 = values(selective_scan(s.u, s.delta, s.A, s.B, s.C));
  auto y2 = values(selective_scan(u2, s.delta, s.A, s.B, s.C));
  auto y12 = values(selective_scan(add(s.u, u2), s.delta, s.A, s.B, s.C));
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y12[i], y1[i] + y2[i], 1e-10);
}

TEST(MambaEncode, DeskShapes) {
  Model model(desk(), 24);
  Pyramid p = model.mamba().encode(input({1, 1, 32, 32, 32}, 25));
  EXPECT_EQ(p.s[0].shape(), (Shape{1, 8, 16, 16, 16}));
  EXPECT_EQ(p.s[1].shape(), (Shape{1, 16, 8, 8, 8}));
  EXPECT_EQ(p.s[2].shape(), (Shape{1, 32, 4, 4, 4}));
  EXPECT_EQ(p.s[3].shape(), (Shape{1, 64, 2, 2, 2}));
  EXPECT_THROW(model.mamba().encode(Tensor::zeros({1, 1, 32, 24, 32})), ContractError);
}

TEST(MambaEncode, PaperWidths) {
  ModelConfig cfg = paper_config().model;
  ParameterStore ps(0);
  MambaBranch branch(ps, cfg);
  Pyramid p = branch.encode(input({1, 1, 32, 32, 32}, 26));
  const std::array<std::size_t, 4> widths{48, 96, 192, 384};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t e = 32 >> (i + 1);
    EXPECT_EQ(p.s[i].shape(), (Shape{1, widths[i], e, e, e}));
  }
  EXPECT_EQ(branch.global_descriptor(p.s[3]).shape(), (Shape{1, 384}));
}

TEST(MambaEncode, ShapesForRandomDivisibleSizes) {
  Model model(desk(), 27);
  std::mt19937_64 rng(28);
  std::uniform_int_distribution<std::size_t> pick_size(1, 3);
  for (int trial = 0; trial < 4; ++trial) {
    std::size_t D = 16 * pick_size(rng), H = 16 * pick_size(rng), W = 16 * pick_size(rng);
    Pyramid p = model.mamba().encode(Tensor::zeros({1, 1, D, H, W}));
    for (std::size_t i = 0; i < 4; ++i) {
      std::size_t f = std::size_t{2} << i;
      EXPECT_EQ(p.s[i].shape(), (Shape{1, desk().mamba.channels[i], D / f, H / f, W / f}));
    }
  }
}

TEST(MambaEncode, ConstantInputHasLowSpatialVariance) {
  Model model(desk(), 29);
  auto spatial_variance = [](const Tensor& s3) {
    const std::size_t c = s3.dim(1), sp = s3.size() / c;
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < sp; ++i) m += s3.at(k * sp + i) / sp;
      for (std::size_t i = 0; i < sp; ++i) v += (s3.at(k * sp + i) - m) * (s3.at(k * sp + i) - m) / sp;
      total += v;
    }
    return total / c;
  };
  double vc = spatial_variance(model.mamba().encode(Tensor::full({1, 1, 32, 32, 32}, 0.3)).s[3]);
  double vr = spatial_variance(model.mamba().encode(input({1, 1, 32, 32, 32}, 30)).s[3]);
  EXPECT_LT(10.0 * vc, vr);
}

TEST(GlobalDescriptor, ConstantAndPermutation) {
  Model model(desk(), 31);
  Tensor s3 = input({1, 64, 2, 2, 2}, 32);
  EXPECT_EQ(model.mamba().global_descriptor(s3).shape(), (Shape{1, 64}));
  Tensor g = model.mamba().global_descriptor(s3);

  std::mt19937_64 rng(33);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> v(s3.size());
    for (std::size_t c = 0; c < 64; ++c)
      for (std::size_t i = 0; i < 8; ++i) v[c * 8 + i] = s3.at(c * 8 + perm[i]);
    EXPECT_EQ(values(model.mamba().global_descriptor(Tensor::from(s3.shape(), v))), values(g));
  }
  Tensor pooled = global_avg_pool(Tensor::full({1, 3, 2, 2, 2}, 0.625));
  for (double v : pooled.data()) EXPECT_EQ(v, 0.625);
}

TEST(ImportanceMap, RangeZeroLogitsAndMonotone) {
  Model model(desk(), 34);
  Tensor s2 = input({1, 32, 4, 4, 4}, 35);
  Tensor m = model.mamba().importance_map(s2);
  EXPECT_EQ(m.shape(), (Shape{1, 1, 4, 4, 4}));
  for (double v : m.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);

  Tensor logits = model.mamba().importance_logits(s2);
  std::vector<std::size_t> order(m.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return logits.at(a) < logits.at(b); });
  for (std::size_t i = 1; i < order.size(); ++i) EXPECT_LE(m.at(order[i - 1]), m.at(order[i]));

  set_all(model.params().get("mamba.importance.w"), 0.0);
  set_all(model.params().get("mamba.importance.b"), 0.0);
  Tensor half = model.mamba().importance_map(s2);
  for (double v : half.data()) EXPECT_EQ(v, 0.5);
}

TEST(Conditioning, RangesAndIdentityFilmAtInit) {
  Model model(desk(), 36);
  for (std::uint64_t s = 0; s < 3; ++s) {
    Tensor g = input({1, 64}, 37 + s);
    Conditioning c = model.mamba().conditioning(g);
    EXPECT_EQ(c.injection.size(), 2u);
    for (double v : c.injection.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(c.gamma[j].size(), desk().mamba.channels[j]);
      for (double v : c.gamma[j].data()) EXPECT_EQ(v, 1.0);
      for (double v : c.beta[j].data()) EXPECT_EQ(v, 0.0);
    }
  }
}

// ---- Fusion and decoder ----------------------------------------------------

TEST(ShallowBridge, GateExamples) {
  Model model(desk(), 40);
  const auto& br = model.shallow_bridges()[0];
  Tensor loc = input({1, 64, 4, 4, 4}, 41), glob = input({1, 64}, 42);
  auto out = br.combine(loc, glob);
  EXPECT_NEAR(out.weights.at(0) + out.weights.at(1), 1.0, 1e-15);

  auto zero = br.combine(Tensor::zeros({1, 64, 4, 4, 4}), Tensor::zeros({1, 64}));
  for (double v : zero.features.data()) EXPECT_EQ(v, 0.0);

  set_all(br.gate.w, 0.0);
  set_all(br.gate.b, 0.0);
  auto eq = br.combine(loc, glob);
  EXPECT_EQ(eq.weights.at(0), 0.5);
  EXPECT_EQ(eq.weights.at(1), 0.5);
  const std::size_t sp = 64;
  for (std::size_t c = 0; c < 64; ++c)
    EXPECT_NEAR(eq.features.at(c * sp + 5), 0.5 * loc.at(c * sp + 5) + 0.5 * glob.at(c), 1e-15);
}

TEST(DeepBridge, ReverseExchange) {
  ModelConfig cfg = desk();
  cfg.sam.embed_dim = 16;  // same width as s1, so the projection can be the identity
  cfg.sam.heads = 4;
  Model model(cfg, 43);
  const auto& br = model.deep_bridges()[0];
  Tensor f_sam = input({1, 16, 8, 8, 8}, 44), f_m = input({1, 16, 8, 8, 8}, 45);
  EXPECT_EQ(values(br.exchange(f_sam, f_m)), values(f_m));

  set_all(br.reverse_gate, 1.0);
  set_all(br.reverse_proj.w, 0.0);
  set_all(br.reverse_proj.b, 0.0);
  Tensor w = br.reverse_proj.w;
  for (std::size_t c = 0; c < 16; ++c) w.mutable_data()[c * 16 + c] = 1.0;
  auto sum = br.exchange(f_sam, f_m);
  for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_EQ(sum.at(i), f_m.at(i) + f_sam.at(i));
}

TEST(DeepBridge, FusionWeights) {
  Model model(desk(), 46);
  const auto& br = model.deep_bridges()[0];
  Tensor f_sam = input({1, 64, 8, 8, 8}, 47), f_m = input({1, 16, 8, 8, 8}, 48);
  auto out = br.fuse(f_sam, f_m, f_m);
  EXPECT_EQ(out.fused.shape(), f_m.shape());
  for (double w : out.weights.data()) EXPECT_EQ(w, 1.0 / 3.0);

  Tensor lg = br.logits;
  auto logits = lg.mutable_data();
  logits[0] = 20, logits[1] = -20, logits[2] = -20;
  auto sat = br.fuse(f_sam, f_m, f_m).weights;
  EXPECT_NEAR(sat.at(0), 1.0, 1e-8);
  EXPECT_NEAR(sat.at(1), 0.0, 1e-8);
  EXPECT_NEAR(sat.at(2), 0.0, 1e-8);

  std::mt19937_64 rng(49);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    for (auto& l : logits) l = n(rng);
    auto w = softmax(br.logits, 0);
    EXPECT_NEAR(w.at(0) + w.at(1) + w.at(2), 1.0, 1e-12);
  }
}

TEST(Film, Examples) {
  Tensor s = input({1, 3, 2, 2, 2}, 50);
  Tensor one = Tensor::full({1, 3}, 1.0), zero = Tensor::zeros({1, 3});
  EXPECT_EQ(values(film_modulate(s, one, zero)), values(s));
  Tensor beta = Tensor::from({1, 3}, {0.1, -0.2, 0.3});
  auto b = film_modulate(s, zero, beta);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(b.at(c * 8 + i), beta.at(c));
  auto r = film_modulate(Tensor::full({1, 3, 2, 2, 2}, 1.0), Tensor::full({1, 3}, 2.0), Tensor::full({1, 3}, -1.0));
  for (double v : r.data()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(film_modulate(s, Tensor::full({1, 4}, 1.0), Tensor::zeros({1, 4})), DimensionError);
}

TEST(StemRefine, ZeroGateIsIdentity) {
  Model model(desk(), 51);
  Tensor x = input({1, 4, 8, 8, 8}, 52), stem = input({1, 4, 8, 8, 8}, 53);
  EXPECT_EQ(values(model.decoder().stem_refine(x, stem)), values(x));
  set_all(model.decoder().stem_gate(), 0.3);
  auto once = values(model.decoder().stem_refine(x, stem));
  EXPECT_NE(once, values(x));
  EXPECT_EQ(values(model.decoder().stem_refine(x, stem)), once);
}

TEST(Decode, ShapesFiniteAndArgmax) {
  Model model(desk(), 54);
  NoGradGuard ng;
  for (Shape s : {Shape{1, 1, 32, 32, 32}, Shape{1, 1, 16, 32, 48}, Shape{2, 1, 16, 16, 16}}) {
    Tensor y = model.forward(input(s, 55));
    EXPECT_EQ(y.shape(), (Shape{s[0], 3, s[2], s[3], s[4]}));
    for (double v : y.data()) ASSERT_TRUE(std::isfinite(v));
    Tensor p = softmax(y, 1);
    const std::size_t sp = s[2] * s[3] * s[4];
    for (std::size_t i = 0; i < sp; ++i) {
      auto best = [&](const Tensor& t) {
        std::size_t k = 0;
        for (std::size_t c = 1; c < 3; ++c)
          if (t.at(c * sp + i) > t.at(k * sp + i)) k = c;
        return k;
      };
      ASSERT_EQ(best(p), best(y));
    }
  }
}

TEST(InitGating, ReverseMaskingChangesNoBit) {
  Model model(desk(), 56);
  NoGradGuard ng;
  for (std::uint64_t s = 0; s < 2; ++s) {
    Tensor x = input({1, 1, 32, 32, 32}, 57 + s);
    ForwardOptions on, off;
    off.reverse = false;
    EXPECT_EQ(values(model.forward(x, on)), values(model.forward(x, off)));
  }
}

TEST(Model, WorkerCountDoesNotChangeOutput) {
  Model model(tiny(), 58);
  Tensor x = input({1, 1, 16, 16, 16}, 59);
  set_thread_count(1);
  auto one = values(model.forward(x));
  set_thread_count(3);
  auto three = values(model.forward(x));
  set_thread_count(1);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(one[i], three[i], 1e-12);
}

TEST(Model, MacEstimateMatchesCounter) {
  Model model(desk(), 60);
  Tensor x = input({1, 1, 32, 32, 32}, 61);
  NoGradGuard ng;
  for (double tau : {0.0, 0.5, 1.0}) {
    for (bool rev : {true, false}) {
      ForwardOptions opt;
      opt.route_threshold = tau;
      opt.reverse = rev;
      ForwardTrace tr;
      reset_mac_counter();
      model.forward(x, opt, &tr);
      double frac = static_cast<double>(tr.full_tokens) / 512.0;
      EXPECT_EQ(mac_counter(), model.estimate_macs({32, 32, 32}, frac, rev)) << tau << " " << rev;
    }
  }
}

TEST(Model, ParameterCountMatchesLayerArithmetic) {
  for (const ModelConfig& cfg : {desk(), tiny(), paper_config().model}) {
    Model model(cfg, 0, false);
    auto t = samamba::testing::tally_parameters(cfg);
    const auto& ps = model.params();
    EXPECT_EQ(ps.count(), t.total());
    EXPECT_EQ(ps.count([](const Param& p) { return p.role == Role::Trainable; }), t.stage_a());
    EXPECT_EQ(ps.count([](const Param& p) { return p.role == Role::FrozenBackbone; }), t.frozen);
    EXPECT_EQ(ps.count([](const Param& p) { return p.role == Role::Lora; }), t.lora);
    EXPECT_EQ(ps.count([](const Param& p) { return p.role == Role::SamAdapter; }), t.adapters);
    EXPECT_EQ(ps.count([](const Param& p) { return p.role == Role::SamNorm; }), t.norms);
    EXPECT_EQ(ps.count([](const Param& p) { return p.role == Role::Reverse; }), t.reverse);
  }
  EXPECT_THROW(Model(desk(), 0, false).forward(Tensor::zeros({1, 1, 16, 16, 16})), ContractError);
}

TEST(Model, FullNetworkFiniteDifferences) {
  Model model(tiny(), 62);
  std::mt19937_64 rng(63);
  std::uniform_real_distribution<double> noise(-0.2, 0.2);
  // Move every zero-initialized gate and projection off zero so all paths carry gradient.
  for (const auto& p : model.params().params()) {
    Tensor t = p.value;
    for (auto& v : t.mutable_data()) v += noise(rng);
  }
  set_all(model.params().get("early.lambda"), 0.3);

  Tensor x = input({1, 1, 16, 16, 16}, 64);
  Tensor r = random_tensor({1, 3, 16, 16, 16}, rng, -1, 1, false);
  ForwardOptions opt;
  opt.route_threshold = 0.0;
  auto loss = [&] { return sum_all(mul(model.forward(x, opt), r)); };

  model.params().zero_grad();
  backward(loss());

  const double h = 1e-4;
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& p : model.params().params()) {
    Tensor t = p.value;
    auto grad = t.grad();
    std::vector<std::size_t> idx{0, t.size() / 2, t.size() - 1};
    double diff = 0.0, norm = 0.0;
    for (std::size_t i : idx) {
      auto d = t.mutable_data();
      double orig = d[i], plus, minus;
      {
        NoGradGuard ng;
        d[i] = orig + h;
        plus = loss().item();
        d[i] = orig - h;
        minus = loss().item();
        d[i] = orig;
      }
      double num = (plus - minus) / (2 * h);
      diff += (num - grad[i]) * (num - grad[i]);
      norm += std::max(num * num, grad[i] * grad[i]);
      ++checked;
    }
    // Central differences carry roundoff near eps * |L| / h, so gradients below
    // 1e-6 are compared absolutely.
    double rel = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-6);
    // Key biases shift every score of a query equally, which softmax ignores:
    // their gradient is zero and the difference quotient is pure roundoff.
    if (p.name.ends_with(".k.b")) {
      for (double g : grad) EXPECT_LT(std::abs(g), 1e-12) << p.name;
      EXPECT_LT(std::sqrt(diff), 1e-9) << p.name;
      continue;
    }
    EXPECT_LT(rel, 1e-4) << p.name;
    worst = std::max(worst, rel);
  }
  EXPECT_GT(checked, 300u);
  RecordProperty("worst_relative_error", std::to_string(worst));
}
