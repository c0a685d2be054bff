#include "samamba/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "samamba/tensor.hpp"

namespace samamba {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SamConfig, embed_dim, depth, heads, mlp_ratio, patch, lora_rank,
                                                lora_alpha, lora_dropout, adapter_dim, shallow_depths, deep_depths,
                                                route_threshold, pos_scale, init_std)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MambaConfig, channels, state_dim, blocks_per_stage, conv_kernel,
                                                descriptor_dim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, in_channels, num_classes, stem_channels, head_channels,
                                                se_reduction, early_lambda_init, sam, mamba)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, delta, lambda_dice, lambda_tversky, lambda_focal,
                                                tversky_alpha, tversky_beta, focal_gamma, eps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimConfig, lr, beta1, beta2, weight_decay, eps, clip_norm)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, stage_a_epochs, max_epochs, patience, min_delta)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentSettings, flip_p, brightness_lo, brightness_hi, noise_p,
                                                noise_sigma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, batch_size, val_fraction, seed, augment, augmentation,
                                                steps_per_epoch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PatchGrid, patch, stride, min_foreground)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NlmParams, patch_radius, search_radius, h)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, grid, nlm, denoise)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InferenceConfig, overlap, sigma_fraction, patch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Config, model, loss, optim, schedule, train, data, inference)

namespace {

// Rejects keys that the schema does not know, so typos do not silently fall back to defaults.
void check_keys(const nlohmann::json& given, const nlohmann::json& schema, const std::string& path) {
  if (!given.is_object() || !schema.is_object()) return;
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (!schema.contains(it.key())) throw ConfigError("config: unknown key '" + path + it.key() + "'");
    check_keys(it.value(), schema.at(it.key()), path + it.key() + ".");
  }
}

}  // namespace

void SamConfig::validate() const {
  if (embed_dim == 0 || depth == 0 || heads == 0) throw ConfigError("sam: embed_dim, depth and heads must be positive");
  if (embed_dim % heads != 0) throw ConfigError("sam: embed_dim must be divisible by heads");
  if (lora_rank == 0 || lora_rank >= embed_dim) throw ConfigError("sam: lora_rank must satisfy 0 < r < C");
  if (patch == 0) throw ConfigError("sam: patch must be positive");
  if (lora_dropout < 0.0 || lora_dropout >= 1.0) throw ConfigError("sam: lora_dropout must be in [0, 1)");
  for (auto d : shallow_depths) {
    if (d >= depth) throw ConfigError("sam: shallow depth out of range");
    for (auto e : deep_depths)
      if (d == e) throw ConfigError("sam: shallow and deep depth sets must be disjoint");
  }
  for (auto d : deep_depths)
    if (d >= depth) throw ConfigError("sam: deep depth out of range");
  if (route_threshold < 0.0 || route_threshold > 1.0) throw ConfigError("sam: route_threshold must be in [0, 1]");
  if (pos_scale < 0.0) throw ConfigError("sam: pos_scale must be >= 0");
}

void MambaConfig::validate() const {
  for (auto c : channels)
    if (c == 0) throw ConfigError("mamba: channels must be positive");
  if (state_dim == 0 || blocks_per_stage == 0 || conv_kernel == 0) throw ConfigError("mamba: sizes must be positive");
}

void ModelConfig::validate() const {
  sam.validate();
  mamba.validate();
  if (num_classes < 2) throw ConfigError("model: need at least two classes");
  if (in_channels == 0 || stem_channels == 0 || head_channels == 0 || se_reduction == 0)
    throw ConfigError("model: widths must be positive");
}

void Config::validate() const {
  model.validate();
  if (!(loss.delta > 0.0)) throw ConfigError("loss: delta must be positive");
  if (!(optim.lr > 0.0)) throw ConfigError("optim: lr must be positive");
  if (train.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (train.val_fraction < 0.0 || train.val_fraction >= 1.0) throw ConfigError("train: val_fraction must be in [0, 1)");
  if (schedule.max_epochs == 0) throw ConfigError("schedule: max_epochs must be positive");
  if (inference.overlap < 0.0 || inference.overlap >= 1.0) throw ConfigError("inference: overlap must be in [0, 1)");
  if (!(inference.sigma_fraction > 0.0)) throw ConfigError("inference: sigma_fraction must be positive");
  if (data.grid.patch % 16 != 0) throw ConfigError("data: patch size must be divisible by 16");
}

Config desk_config() {
  Config c;
  c.data.grid.patch = 32;
  c.data.grid.stride = 16;
  return c;
}

Config paper_config() {
  Config c;
  c.model.sam.embed_dim = 768;
  c.model.sam.depth = 12;
  c.model.sam.heads = 12;
  c.model.sam.adapter_dim = 192;
  c.model.sam.shallow_depths = {2, 5};
  c.model.sam.deep_depths = {8, 11};
  c.model.mamba.channels = {48, 96, 192, 384};
  c.model.mamba.state_dim = 16;
  c.model.mamba.descriptor_dim = 384;
  c.model.stem_channels = 16;
  c.model.head_channels = 32;
  c.data.grid.patch = 96;
  c.data.grid.stride = 48;
  return c;
}

std::string config_to_json(const Config& c) { return nlohmann::ordered_json(nlohmann::json(c)).dump(2); }

Config config_from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    check_keys(j, nlohmann::json(Config{}), "");
    Config c = j.get<Config>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const std::filesystem::path& path, const Config& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << config_to_json(c) << '\n';
}

}  // namespace samamba
