#pragma once

#include <array>

#include "samamba/config.hpp"
#include "samamba/layers.hpp"
#include "samamba/mamba.hpp"

namespace samamba {

/// s' = gamma * s + beta, channel-wise; gamma/beta are [1, C].
Tensor film_modulate(const Tensor& s, const Tensor& gamma, const Tensor& beta);

/// Mamba -> SAM adapter used at shallow depths: a depthwise-separable local
/// path and a pooled global path, mixed by a learned two-way softmax gate.
struct ShallowBridge {
  Conv proj, depthwise, pointwise;
  Linear global, gate;

  struct Output {
    Tensor features;  // [1, C, d, h, w]
    Tensor weights;   // [1, 2] = (w_local, w_global)
  };

  ShallowBridge() = default;
  ShallowBridge(ParameterStore& ps, const std::string& name, std::size_t mamba_channels, std::size_t embed_dim);
  Output operator()(const Tensor& f_mamba) const;
  /// Gate-weighted mix of given local/global features.
  Output combine(const Tensor& f_local, const Tensor& f_global) const;
};

/// SAM -> Mamba feedback plus three-way cross-scale fusion at a deep depth.
struct DeepBridge {
  Conv reverse_proj;
  Tensor reverse_gate;  // [1], zero at init
  Conv sam_proj, mamba_proj, ctx_proj;
  Linear attn_q, attn_k, attn_v;
  Linear se1, se2;
  Linear ca_q, ca_k, ca_v;
  Tensor logits;  // [3]

  struct Output {
    Tensor fused;    // [1, c, d, h, w]
    Tensor weights;  // [3] = (alpha, beta, gamma)
  };

  DeepBridge() = default;
  DeepBridge(ParameterStore& ps, const std::string& name, std::size_t embed_dim, std::size_t channels,
             std::size_t se_reduction);
  /// F_mamba + g * Proj(F_sam)
  Tensor exchange(const Tensor& f_sam, const Tensor& f_mamba) const;
  /// alpha Attn(F_sam) + beta SE(Proj F_mamba) + gamma CA(F_sam queries over Proj F_ctx)
  Output fuse(const Tensor& f_sam, const Tensor& f_mamba, const Tensor& f_ctx) const;
};

/// Coarse-to-fine decoder with FiLM-modulated skips, stem refinement and the output head.
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore& ps, const ModelConfig& cfg);

  /// fused: cross-scale fusion output at s1 resolution (may be undefined when
  /// no deep depths are configured). stem: [1, stem_channels, D, H, W].
  Tensor operator()(const Pyramid& skips, const Conditioning& cond, const Tensor& fused, const Tensor& stem) const;

  /// x' = x + lambda_stem * Refine([x, F_stem])
  Tensor stem_refine(const Tensor& x, const Tensor& stem) const;
  const Tensor& stem_gate() const { return stem_gate_; }

 private:
  ModelConfig cfg_;
  std::array<Conv, 4> stage_;
  Conv refine1_, refine2_;
  Tensor stem_gate_;
  Conv head_conv_, head_proj_;
};

}  // namespace samamba
