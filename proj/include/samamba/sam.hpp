#pragma once

#include <random>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/layers.hpp"

namespace samamba {

/// Per-call switches shared by the branches.
struct ForwardOptions {
  bool training = false;
  /// SAM -> Mamba feedback at deep depths.
  bool reverse = true;
  /// LoRA residuals and 3D adapters. Off gives the plain backbone.
  bool adapters = true;
  /// Overrides the configured routing threshold when >= 0.
  double route_threshold = -1.0;
  /// Axial over lateral voxel spacing of the input.
  double anisotropy = 1.0;
  /// Dropout stream; required when training with nonzero LoRA dropout.
  std::mt19937_64* rng = nullptr;
};

/// Low-rank residual update dropout(x A) B * (alpha / r). x: [.., C], A: [C, r], B: [r, C].
Tensor lora_delta(const Tensor& x, const Tensor& a, const Tensor& b, double alpha, double dropout_rate,
                  bool training, std::mt19937_64* rng);

/// b(c, z) = sin(2 pi (c+1)/C * rho z / S), returned as [C, Z].
Tensor positional_bias(std::size_t channels, std::size_t depth, double rho, double scale);

struct Routing {
  std::vector<std::size_t> full;
  std::vector<std::size_t> light;
};

/// Tokens with importance >= tau take the attention path, the rest the light path.
Routing route_tokens(std::span<const double> importance, double tau);

/// Resamples the importance map [1, 1, d, h, w] to the token grid: nearest
/// upsampling when coarser, average pooling when finer.
Tensor importance_to_tokens(const Tensor& m, std::array<std::size_t, 3> grid);

struct LoraPair {
  Tensor a, b;
};

struct SamBlock {
  LayerNorm ln1, ln2;
  Linear q, k, v, o;
  LoraPair lora_q, lora_v;
  Linear fc1, fc2;
  Linear adapter_down, adapter_up;
  Conv adapter_dw;
};

class SamBranch {
 public:
  SamBranch() = default;
  SamBranch(ParameterStore& ps, const ModelConfig& cfg);

  /// X' = X + |lambda| * Proj(Upsample(s0)).
  Tensor early_fuse(const Tensor& x, const Tensor& s0) const;
  /// Patch embedding [1, Cin, D, H, W] -> token grid [1, C, D/p, H/p, W/p].
  Tensor embed(const Tensor& x) const;
  /// Tokens [T, C] plus the anisotropy-aware positional bias for a grid of depth `depth`.
  Tensor add_position(const Tensor& tokens, std::array<std::size_t, 3> grid, double rho) const;
  /// One transformer block. `importance` holds the per-token routing scores [T].
  Tensor block(std::size_t l, const Tensor& tokens, const Tensor& importance, const Routing& routing,
               std::array<std::size_t, 3> grid, const ForwardOptions& opt) const;

  const SamBlock& block_params(std::size_t l) const { return blocks_.at(l); }
  const Tensor& early_lambda() const { return early_lambda_; }
  const SamConfig& config() const { return cfg_.sam; }

 private:
  ModelConfig cfg_;
  Conv early_proj_;
  Tensor early_lambda_;
  Conv embed_;
  std::vector<SamBlock> blocks_;
};

}  // namespace samamba
