#pragma once

#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/model.hpp"
#include "samamba/optim.hpp"

namespace samamba {

struct CheckpointMeta {
  Stage stage = Stage::A;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  /// Intensity reference the model was trained against; needed for inference.
  std::optional<ReferenceStats> reference;
};

/// A checkpoint directory holds `manifest.json` (configuration, metadata and
/// one entry per tensor with its name, shape, role, offset and length) and
/// `tensors.bin`, the little-endian f64 values of every parameter followed by
/// the optimizer moments.
void save_checkpoint(const std::filesystem::path& dir, const Config& config, const Model& model,
                     const CheckpointMeta& meta, const OptimizerState* optimizer = nullptr);

struct Checkpoint {
  Config config;
  CheckpointMeta meta;
  std::unique_ptr<Model> model;
  OptimizerState optimizer;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct ImportReport {
  std::vector<std::string> loaded;
  std::vector<std::string> unmatched;  // present in the file but not in the store
  std::vector<std::string> missing;    // present in the store but not in the file
};

/// Copies tensors from a checkpoint-format directory into `store` by name, for
/// weights converted from another framework (e.g. a pretrained image encoder
/// whose names were mapped onto `sam.block*`). Shapes must match exactly.
/// Only manifest entries of kind "param" are considered.
ImportReport import_parameters(const std::filesystem::path& dir, ParameterStore& store);

/// Parameter-name prefixes of each architectural component, as recorded in the manifest.
std::vector<std::pair<std::string, std::vector<std::string>>> component_prefixes();

/// Little-endian f64 encoding used for all blobs.
void write_f64le(std::ostream& out, std::span<const double> values);
void read_f64le(std::istream& in, std::span<double> values);

}  // namespace samamba
