#pragma once

#include "samamba/config.hpp"

namespace samamba::testing {

// Small enough for finite differences over the whole network and for
// multi-epoch training runs inside a unit test.
inline ModelConfig tiny_model() {
  ModelConfig m;
  m.stem_channels = 2;
  m.head_channels = 2;
  m.se_reduction = 2;
  m.mamba.channels = {4, 4, 6, 6};
  m.mamba.state_dim = 2;
  m.mamba.conv_kernel = 2;
  m.sam.embed_dim = 4;
  m.sam.heads = 2;
  m.sam.mlp_ratio = 2;
  m.sam.lora_rank = 2;
  m.sam.adapter_dim = 2;
  return m;
}

}  // namespace samamba::testing
