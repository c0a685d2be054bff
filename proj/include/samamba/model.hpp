#pragma once

#include <array>
#include <memory>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/fusion.hpp"
#include "samamba/mamba.hpp"
#include "samamba/params.hpp"
#include "samamba/sam.hpp"

namespace samamba {

/// Intermediate values of the last sample in a forward pass, for inspection.
struct ForwardTrace {
  Pyramid pyramid;
  Tensor s1_updated;
  Tensor descriptor;
  Tensor importance;
  Tensor token_importance;
  Conditioning conditioning;
  Tensor stem;
  Tensor early_fused;
  std::vector<Tensor> sam_exports;
  std::vector<Tensor> fused;
  std::vector<Tensor> fusion_weights;
  std::vector<Tensor> shallow_weights;
  std::size_t full_tokens = 0;
  std::size_t light_tokens = 0;
};

/// Dual-encoder volumetric segmentation network.
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0, bool materialize = true);

  /// x: [B, Cin, D, H, W] with D, H, W divisible by 16. Returns logits [B, K, D, H, W].
  Tensor forward(const Tensor& x, const ForwardOptions& opt = {}, ForwardTrace* trace = nullptr) const;

  ParameterStore& params() { return *params_; }
  const ParameterStore& params() const { return *params_; }
  const ModelConfig& config() const { return cfg_; }
  const MambaBranch& mamba() const { return mamba_; }
  const SamBranch& sam() const { return sam_; }
  const Decoder& decoder() const { return decoder_; }
  const std::vector<ShallowBridge>& shallow_bridges() const { return shallow_; }
  const std::vector<DeepBridge>& deep_bridges() const { return deep_; }

  /// Multiply-accumulates of one forward pass on a single patch, counting
  /// convolutions, linear maps, attention products and scans. `full_fraction`
  /// is the share of tokens routed through attention.
  std::uint64_t estimate_macs(std::array<std::size_t, 3> patch, double full_fraction = 1.0,
                              bool reverse = true) const;

 private:
  Tensor forward_one(const Tensor& x, const ForwardOptions& opt, ForwardTrace* trace) const;

  ModelConfig cfg_;
  std::unique_ptr<ParameterStore> params_;
  Conv stem_;
  MambaBranch mamba_;
  SamBranch sam_;
  std::vector<ShallowBridge> shallow_;
  std::vector<DeepBridge> deep_;
  Decoder decoder_;
};

}  // namespace samamba
