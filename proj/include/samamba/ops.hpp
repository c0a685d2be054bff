#pragma once

// Differentiable primitives. Every function here records a backward closure
// when grad mode is on; each has a finite-difference test in tests/.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "samamba/tensor.hpp"

namespace samamba {

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
/// x * g where g is a one-element tensor (learnable gates).
Tensor mul_gate(const Tensor& x, const Tensor& g);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Exact (erf) GeLU.
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Sums out one axis (the axis is removed from the shape).
Tensor sum_axis(const Tensor& x, std::size_t axis);

// ---- broadcasting helpers ------------------------------------------------

/// x[..., C] + b[C]
Tensor add_bias(const Tensor& x, const Tensor& b);
/// x[..., C] * s[C]
Tensor scale_cols(const Tensor& x, const Tensor& s);
/// x[T, C] * m[T]
Tensor scale_rows(const Tensor& x, const Tensor& m);
/// v[C] or v[1, C] repeated into [rows, C].
Tensor broadcast_rows(const Tensor& v, std::size_t rows);
/// x[B, C, ...] + b[C]
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
/// gamma[B, C] * x[B, C, ...] + beta[B, C]
Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// ---- linear algebra ------------------------------------------------------

/// [m,k]x[k,n] or batched [b,m,k]x[b,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
/// x[..., in] * w[in, out] (+ b[out]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

// ---- shape ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Zero padding of the three trailing axes: {before_d, after_d, before_h, after_h, before_w, after_w}.
Tensor pad3d(const Tensor& x, const std::array<std::size_t, 6>& pads);
/// Rows `idx` of x[T, C].
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
/// Places x[n, C] at rows `idx` of a zero [rows, C] tensor.
Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t rows);

/// [1, C, D, H, W] -> [D*H*W, C] (z-major token order).
Tensor to_tokens(const Tensor& grid);
/// [D*H*W, C] -> [1, C, D, H, W].
Tensor from_tokens(const Tensor& tokens, std::size_t d, std::size_t h, std::size_t w);

// ---- neural network ------------------------------------------------------

/// x[B, Cin, D, H, W], w[Cout, Cin/groups, kd, kh, kw].
Tensor conv3d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t padding = 0,
              std::size_t groups = 1);
Tensor avg_pool3d(const Tensor& x, std::size_t kernel);
Tensor max_pool3d(const Tensor& x, std::size_t kernel);
/// [B, C, ...] -> [B, C]
Tensor global_avg_pool(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
/// Trilinear resampling (half-pixel centers) of x[B, C, D, H, W] to the given extents.
Tensor upsample_trilinear(const Tensor& x, std::array<std::size_t, 3> out);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies gain/bias (both [C]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

/// Scaled dot-product attention. q,k,v are [T, d] or [H, T, d]; keys may have
/// a different length than queries.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// ---- state space ---------------------------------------------------------

/// Selective scan over a [T, C] sequence with per-step parameters:
///   abar_t = exp(delta_t[c] * A[c,n]),  bbar_t = delta_t[c] * B_t[n]
///   h_t = abar_t * h_{t-1} + bbar_t * u_t[c],  y_t[c] = sum_n C_t[n] h_t[c,n]
/// u, delta: [T, C]; A: [C, N]; B, C: [T, N]. h_0 = 0.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                      const Tensor& C);

/// Multiply-accumulate counter fed by conv3d, matmul and selective_scan.
std::uint64_t mac_counter();
void reset_mac_counter();

}  // namespace samamba
