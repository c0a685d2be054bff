#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/model.hpp"
#include "samamba/optim.hpp"
#include "samamba/preprocess.hpp"

namespace samamba {

/// A raw training volume with its ground-truth labels.
struct TrainingVolume {
  Volume image;
  LabelVolume labels;
  std::string name;
};

struct EpochRecord {
  std::size_t epoch = 0;
  Stage stage = Stage::A;
  std::size_t steps = 0;
  double train_loss = 0.0;
  double train_dice = 0.0;
  /// Validation metrics; equal to the training ones when there is no validation split.
  double val_loss = 0.0;
  double val_dice = 0.0;
  bool improved = false;
  double seconds = 0.0;

  std::string json() const;
};

struct TrainOptions {
  /// When set, receives metrics.jsonl, reference.json and the best/ and last/ checkpoints.
  std::filesystem::path output_dir;
  /// Checkpoint-format directory whose parameters are imported by name before training.
  std::filesystem::path import_weights;
  /// Called after every epoch with the model in its current (not best) state.
  std::function<void(const EpochRecord&, const Model&)> on_epoch_end;
  bool log = true;
};

struct TrainResult {
  std::unique_ptr<Model> model;  // restored to the best epoch
  ReferenceStats reference;
  OptimizerState optimizer;       // state after the last epoch
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::size_t train_patches = 0, val_patches = 0;
  std::vector<std::string> val_volumes;
};

/// Deterministic 64-bit stream seed derived from a base seed, a tag and two indices.
std::uint64_t stream_seed(std::uint64_t seed, const std::string& tag, std::uint64_t a = 0, std::uint64_t b = 0);

/// Indices of the volumes held out for validation: round(fraction * n), at least one
/// when fraction > 0 and n >= 2, never all of them.
std::vector<std::size_t> validation_split(std::size_t volumes, double fraction, std::uint64_t seed);

/// Two-stage training. Volumes are denoised (if configured), a reference is
/// fitted on the training split, every volume is harmonized against it, and
/// patches are cut on the configured grid. Stage A trains the Role::Trainable
/// parameters with the reverse pathway off; Stage B also trains SAM norms,
/// adapters, LoRA and the reverse pathway. Stops early on validation loss.
/// Throws ConfigError when there is no usable training data.
TrainResult train(const Config& cfg, const std::vector<TrainingVolume>& data, const TrainOptions& opts = {});

struct EvalResult {
  double loss = 0.0;
  double dice = 0.0;  // macro Dice of the argmax labels, averaged over patches
};

/// Eval-mode loss and Dice over prepared patches.
EvalResult evaluate_patches(const Model& model, const std::vector<Patch>& patches, const LossConfig& loss,
                            bool reverse);

}  // namespace samamba
