#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "samamba/preprocess.hpp"

namespace samamba {

struct SamConfig {
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t patch = 4;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  double lora_dropout = 0.1;
  std::size_t adapter_dim = 16;
  std::vector<std::size_t> shallow_depths{0, 1};
  std::vector<std::size_t> deep_depths{2, 3};
  double route_threshold = 0.5;
  /// Positional-bias base scale; 0 means the token-grid depth extent.
  double pos_scale = 0.0;
  double init_std = 0.02;

  void validate() const;
};

struct MambaConfig {
  std::array<std::size_t, 4> channels{8, 16, 32, 64};
  std::size_t state_dim = 4;
  std::size_t blocks_per_stage = 1;
  std::size_t conv_kernel = 4;
  /// Length of the global descriptor; 0 means the last stage width.
  std::size_t descriptor_dim = 0;

  std::size_t descriptor() const { return descriptor_dim ? descriptor_dim : channels[3]; }
  void validate() const;
};

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 3;
  std::size_t stem_channels = 4;
  std::size_t head_channels = 4;
  std::size_t se_reduction = 4;
  double early_lambda_init = 0.001;
  SamConfig sam;
  MambaConfig mamba;

  void validate() const;
};

struct LossConfig {
  double delta = 0.3;
  double lambda_dice = 1.0;
  double lambda_tversky = 0.5;
  double lambda_focal = 0.5;
  double tversky_alpha = 0.7;
  double tversky_beta = 0.3;
  double focal_gamma = 2.0;
  double eps = 1e-5;
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-5;
  double eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
};

struct ScheduleConfig {
  std::size_t stage_a_epochs = 30;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double min_delta = 1e-6;
};

struct TrainConfig {
  std::size_t batch_size = 2;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentSettings augmentation;
  /// Patches per epoch; 0 means every training patch once.
  std::size_t steps_per_epoch = 0;
};

struct DataConfig {
  PatchGrid grid;
  NlmParams nlm;
  bool denoise = true;
};

struct InferenceConfig {
  double overlap = 0.7;
  /// Gaussian sigma as a fraction of the patch edge.
  double sigma_fraction = 1.0 / 8.0;
  std::size_t patch = 0;  // 0: same as the training patch
};

struct Config {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  ScheduleConfig schedule;
  TrainConfig train;
  DataConfig data;
  InferenceConfig inference;

  void validate() const;
};

/// Desk-scale defaults.
Config desk_config();
/// Published architecture widths (C=768, L=12, Mamba [48,96,192,384], d=384).
Config paper_config();

Config load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const Config& c);
std::string config_to_json(const Config& c);
Config config_from_json(const std::string& text);

}  // namespace samamba
