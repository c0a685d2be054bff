#pragma once

#include <array>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/layers.hpp"

namespace samamba {

/// Multi-scale encoder outputs s0..s3, each [1, c_i, D/2^(i+1), H/2^(i+1), W/2^(i+1)].
struct Pyramid {
  std::array<Tensor, 4> s;
};

/// FiLM and injection signals derived from the global descriptor.
struct Conditioning {
  Tensor injection;                 // [1, |shallow depths|], values in (0, 1)
  std::array<Tensor, 4> gamma, beta;  // [1, c_j] per decoder stage
};

/// Selective state-space block over a z-major token sequence:
/// LN -> (x, z) projections -> causal depthwise conv -> SiLU -> input-dependent
/// (delta, B, C) -> scan + D skip -> SiLU(z) gate -> output projection -> residual.
struct MambaBlock {
  LayerNorm norm;
  Linear in_x, in_z;
  Conv conv;
  Linear dt, b_proj, c_proj, out;
  Tensor a_log;  // [C, N]; A = -exp(a_log)
  Tensor d_skip; // [C]
  std::size_t conv_kernel = 4;

  MambaBlock() = default;
  MambaBlock(ParameterStore& ps, const std::string& name, std::size_t channels, std::size_t state_dim,
             std::size_t conv_kernel);
  /// tokens: [T, C]
  Tensor operator()(const Tensor& tokens) const;
};

class MambaBranch {
 public:
  MambaBranch() = default;
  MambaBranch(ParameterStore& ps, const ModelConfig& cfg);

  /// x: [1, Cin, D, H, W] with D, H, W divisible by 16.
  Pyramid encode(const Tensor& x) const;
  /// G = MLP(GAP(s3)): [1, d]
  Tensor global_descriptor(const Tensor& s3) const;
  /// M = sigmoid(phi(s2)): [1, 1, D/8, H/8, W/8]
  Tensor importance_map(const Tensor& s2) const;
  /// Raw logits phi(s2), before the sigmoid.
  Tensor importance_logits(const Tensor& s2) const;
  Conditioning conditioning(const Tensor& g) const;

 private:
  ModelConfig cfg_;
  std::array<Conv, 4> down_;
  std::array<std::vector<MambaBlock>, 4> blocks_;
  Linear desc1_, desc2_;
  Conv importance_;
  Linear inj1_, inj2_;
  std::array<Linear, 4> film1_, film2_;
};

}  // namespace samamba
