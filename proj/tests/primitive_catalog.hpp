#pragma once

// Every differentiable primitive with a seeded input generator, shared by the
// unit tests and the acceptance gradient suite.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace samamba::testing {

struct PrimitiveCase {
  std::string name;
  TensorFn fn;
  std::vector<Tensor> inputs;
};

using CaseBuilder = std::function<PrimitiveCase(std::mt19937_64&)>;

/// Values in [lo, hi] with a random sign, kept away from zero (for |x|).
inline Tensor signed_away_from_zero(Shape s, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(s), rng, 0.2, 1.0);
  std::bernoulli_distribution flip(0.5);
  auto d = t.mutable_data();
  for (auto& v : d)
    if (flip(rng)) v = -v;
  return t;
}

/// Distinct values separated by at least 1e-2 (no max-pool ties under FD steps).
inline Tensor distinct_values(Shape s, std::mt19937_64& rng) {
  std::size_t n = numel(s);
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& x : v) x = x * 0.02 - 0.01 * static_cast<double>(n);
  return Tensor::from(std::move(s), std::move(v), true);
}

inline std::vector<CaseBuilder> primitive_catalog() {
  std::vector<CaseBuilder> c;
  auto R = [](Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) { return random_tensor(std::move(s), rng, lo, hi); };

  c.push_back([R](auto& g) { return PrimitiveCase{"add", [](auto& in) { return add(in[0], in[1]); }, {R({3, 4}, g), R({3, 4}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"sub", [](auto& in) { return sub(in[0], in[1]); }, {R({3, 4}, g), R({3, 4}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"mul", [](auto& in) { return mul(in[0], in[1]); }, {R({3, 4}, g), R({3, 4}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"div", [](auto& in) { return div(in[0], in[1]); }, {R({3, 4}, g), R({3, 4}, g, 0.5, 1.5)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"scale", [](auto& in) { return scale(in[0], -1.7); }, {R({5}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"add_scalar", [](auto& in) { return add_scalar(in[0], 0.3); }, {R({5}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"mul_gate", [](auto& in) { return mul_gate(in[0], in[1]); }, {R({2, 3}, g), R({1}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"exp", [](auto& in) { return exp(in[0]); }, {R({6}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"log", [](auto& in) { return log(in[0]); }, {R({6}, g, 0.5, 2.0)}}; });
  c.push_back([](auto& g) { return PrimitiveCase{"abs", [](auto& in) { return abs(in[0]); }, {signed_away_from_zero({6}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"sigmoid", [](auto& in) { return sigmoid(in[0]); }, {R({6}, g, -3, 3)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"gelu", [](auto& in) { return gelu(in[0]); }, {R({6}, g, -3, 3)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"silu", [](auto& in) { return silu(in[0]); }, {R({6}, g, -3, 3)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"softplus", [](auto& in) { return softplus(in[0]); }, {R({6}, g, -3, 3)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"sum_all", [](auto& in) { return sum_all(in[0]); }, {R({2, 3}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"mean_all", [](auto& in) { return mean_all(in[0]); }, {R({2, 3}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"sum_axis", [](auto& in) { return sum_axis(in[0], 1); }, {R({2, 3, 4}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"add_bias", [](auto& in) { return add_bias(in[0], in[1]); }, {R({3, 4}, g), R({4}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"scale_cols", [](auto& in) { return scale_cols(in[0], in[1]); }, {R({3, 4}, g), R({4}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"scale_rows", [](auto& in) { return scale_rows(in[0], in[1]); }, {R({3, 4}, g), R({3}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"broadcast_rows", [](auto& in) { return broadcast_rows(in[0], 3); }, {R({1, 4}, g)}}; });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"add_channel_bias", [](auto& in) { return add_channel_bias(in[0], in[1]); }, {R({2, 3, 2, 2, 2}, g), R({3}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"channel_affine", [](auto& in) { return channel_affine(in[0], in[1], in[2]); },
                         {R({2, 3, 2, 1, 2}, g), R({2, 3}, g), R({2, 3}, g)}};
  });
  c.push_back([R](auto& g) { return PrimitiveCase{"matmul", [](auto& in) { return matmul(in[0], in[1]); }, {R({4, 5}, g), R({5, 3}, g)}}; });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"matmul_batched", [](auto& in) { return matmul(in[0], in[1]); }, {R({2, 3, 4}, g), R({2, 4, 2}, g)}};
  });
  c.push_back([R](auto& g) { return PrimitiveCase{"transpose", [](auto& in) { return transpose(in[0]); }, {R({2, 3, 4}, g)}}; });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"linear", [](auto& in) { return linear(in[0], in[1], in[2]); }, {R({2, 3, 4}, g), R({4, 5}, g), R({5}, g)}};
  });
  c.push_back([R](auto& g) { return PrimitiveCase{"reshape", [](auto& in) { return reshape(in[0], {4, 3}); }, {R({2, 6}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"permute", [](auto& in) { return permute(in[0], {2, 0, 1}); }, {R({2, 3, 4}, g)}}; });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"concat", [](auto& in) { return concat({in[0], in[1]}, 1); }, {R({2, 3, 2}, g), R({2, 1, 2}, g)}};
  });
  c.push_back([R](auto& g) { return PrimitiveCase{"slice", [](auto& in) { return slice(in[0], 1, 1, 3); }, {R({2, 4, 2}, g)}}; });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"pad3d", [](auto& in) { return pad3d(in[0], {1, 0, 0, 2, 1, 1}); }, {R({1, 2, 2, 2, 3}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"gather_rows", [](auto& in) { return gather_rows(in[0], {3, 0, 3}); }, {R({4, 2}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"scatter_rows", [](auto& in) { return scatter_rows(in[0], {2, 0}, 4); }, {R({2, 3}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"tokens_roundtrip", [](auto& in) { return from_tokens(linear(to_tokens(in[0]), in[1]), 2, 1, 3); },
                         {R({1, 2, 2, 1, 3}, g), R({2, 2}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"conv3d", [](auto& in) { return conv3d(in[0], in[1], 1, 1); }, {R({2, 2, 3, 3, 4}, g), R({3, 2, 3, 3, 3}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"conv3d_stride2", [](auto& in) { return conv3d(in[0], in[1], 2, 0); }, {R({1, 2, 4, 4, 4}, g), R({2, 2, 2, 2, 2}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"conv3d_depthwise", [](auto& in) { return conv3d(in[0], in[1], 1, 1, 2); }, {R({1, 2, 3, 3, 3}, g), R({2, 1, 3, 3, 3}, g)}};
  });
  c.push_back([R](auto& g) { return PrimitiveCase{"avg_pool3d", [](auto& in) { return avg_pool3d(in[0], 2); }, {R({1, 2, 2, 4, 2}, g)}}; });
  c.push_back([](auto& g) { return PrimitiveCase{"max_pool3d", [](auto& in) { return max_pool3d(in[0], 2); }, {distinct_values({1, 2, 2, 4, 2}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"global_avg_pool", [](auto& in) { return global_avg_pool(in[0]); }, {R({2, 3, 2, 2, 1}, g)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"upsample_nearest", [](auto& in) { return upsample_nearest(in[0], 2); }, {R({1, 2, 2, 1, 2}, g)}}; });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"upsample_trilinear", [](auto& in) { return upsample_trilinear(in[0], {4, 3, 5}); }, {R({1, 2, 2, 2, 3}, g)}};
  });
  c.push_back([R](auto& g) { return PrimitiveCase{"softmax", [](auto& in) { return softmax(in[0], 1); }, {R({2, 4, 3}, g, -2, 2)}}; });
  c.push_back([R](auto& g) { return PrimitiveCase{"log_softmax", [](auto& in) { return log_softmax(in[0], 1); }, {R({2, 4, 3}, g, -2, 2)}}; });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"layer_norm", [](auto& in) { return layer_norm(in[0], in[1], in[2]); }, {R({3, 5}, g), R({5}, g), R({5}, g)}};
  });
  c.push_back([R](auto& g) {
    std::uint64_t mask_seed = g();
    return PrimitiveCase{"dropout",
                         [mask_seed](auto& in) {
                           std::mt19937_64 local(mask_seed);
                           return dropout(in[0], 0.3, true, local);
                         },
                         {R({4, 5}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"attention", [](auto& in) { return attention(in[0], in[1], in[2]); }, {R({3, 4}, g), R({5, 4}, g), R({5, 4}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"attention_heads", [](auto& in) { return attention(in[0], in[1], in[2]); },
                         {R({2, 3, 2}, g), R({2, 3, 2}, g), R({2, 3, 2}, g)}};
  });
  c.push_back([R](auto& g) {
    return PrimitiveCase{"selective_scan", [](auto& in) { return selective_scan(in[0], in[1], in[2], in[3], in[4]); },
                         {R({21, 3}, g), R({21, 3}, g, 0.05, 0.5), R({3, 2}, g, -2.0, -0.2), R({21, 2}, g), R({21, 2}, g)}};
  });
  return c;
}

}  // namespace samamba::testing
