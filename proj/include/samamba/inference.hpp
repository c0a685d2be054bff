#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/model.hpp"
#include "samamba/volume.hpp"

namespace samamba {

struct TilePlan {
  Dims dims;
  std::size_t patch = 0;
  std::size_t stride = 0;
  std::vector<std::array<std::size_t, 3>> origins;  // z-major order
};

/// stride = round(patch * (1 - overlap)), at least 1. Throws SizeError when an
/// axis is shorter than the patch.
TilePlan plan_tiles(Dims dims, std::size_t patch, double overlap = 0.7);

/// Separable Gaussian weights over a cubic patch, centred at (patch - 1) / 2, floored at 1e-8.
struct WeightWindow {
  std::size_t patch = 0;
  double sigma = 0.0;
  std::vector<double> weights;  // patch^3, z-major

  double at(std::size_t z, std::size_t y, std::size_t x) const { return weights[(z * patch + y) * patch + x]; }
};

WeightWindow gaussian_window(std::size_t patch, double sigma);

/// Class probabilities of one tile, class-major [K, patch^3].
struct TileProbs {
  std::array<std::size_t, 3> origin{};
  std::vector<double> probs;
};

/// Class-major [K, D*H*W] probabilities over a volume.
struct ProbabilityVolume {
  Dims dims;
  std::size_t classes = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t v) const { return values[c * dims.count() + v]; }
};

/// Gaussian-weighted average of overlapping tiles. Tiles are accumulated in
/// origin order whatever order they are passed in. Throws ContractError if a
/// voxel is not covered by any tile.
ProbabilityVolume stitch(const std::vector<TileProbs>& tiles, const TilePlan& plan, const WeightWindow& window,
                         std::size_t classes);

/// Voxelwise argmax; ties go to the lowest class index.
LabelVolume argmax_labels(const ProbabilityVolume& probs, Spacing spacing = {});

/// Optional NLM denoising followed by harmonization against the reference.
Volume prepare_volume(const Volume& v, const DataConfig& data, const ReferenceStats& reference);

struct Segmentation {
  LabelVolume labels;
  ProbabilityVolume probs;
  TilePlan plan;
};

/// Whole-volume prediction: per-volume preprocessing, tiling, eval-mode
/// forward per tile, Gaussian stitching and argmax. Tiles use
/// cfg.inference.patch, or the training patch size when that is 0.
Segmentation segment_volume(const Model& model, const Volume& v, const ReferenceStats& reference, const Config& cfg);

/// Writes one f32 volume per class as `<base>_<class name>`.
void save_probabilities(const std::filesystem::path& base, const ProbabilityVolume& probs, Spacing spacing,
                        const std::vector<std::string>& class_names);

}  // namespace samamba
