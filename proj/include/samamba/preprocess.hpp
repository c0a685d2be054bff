#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "samamba/volume.hpp"

namespace samamba {

/// Source volume has no usable contrast (its low and high percentiles coincide).
class DegenerateContrastError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Intensity reference fitted on the training split.
struct ReferenceStats {
  double q_low = 0.0;
  double q_high = 1.0;
  double mean = 0.0;
  double std = 1.0;
  double p_low = 1.0;
  double p_high = 99.0;
  std::string provenance;

  void validate() const;
};

void save_stats(const std::filesystem::path& path, const ReferenceStats& s);
ReferenceStats load_stats(const std::filesystem::path& path);

struct NlmParams {
  std::size_t patch_radius = 1;
  std::size_t search_radius = 3;
  /// Filter strength relative to the volume's intensity standard deviation.
  double h = 0.1;
};

/// Non-local means. Patch distances use edge-replicated neighborhoods; the
/// search window is clipped to the volume.
Volume nlm_denoise(const Volume& v, const NlmParams& p = {});

/// Linear-interpolated percentile (p in [0, 100]) of a sample. Samples larger
/// than 2^24 values are subsampled with a fixed seed.
double percentile(const std::vector<double>& values, double p);
std::pair<double, double> percentiles(const std::vector<double>& values, double p_low, double p_high);

/// Affine map sending the source's (p_low, p_high) percentiles onto the reference's.
Volume percentile_align(const Volume& src, const ReferenceStats& ref);
Volume standardize(const Volume& v, const ReferenceStats& stats);

/// Fits percentiles on the pooled training volumes, aligns each of them, then
/// takes the global mean and standard deviation of the aligned voxels.
ReferenceStats fit_reference(const std::vector<Volume>& training, std::string provenance, double p_low = 1.0,
                             double p_high = 99.0);

/// Percentile alignment followed by standardization.
Volume harmonize(const Volume& v, const ReferenceStats& stats);

// ---- augmentation --------------------------------------------------------

struct AugmentDraw {
  std::array<bool, 3> flip{false, false, false};  // z, y, x
  int rot90 = 0;                                  // quarter turns in the (y, x) plane
  double brightness = 1.0;
  bool noise = false;
  std::uint64_t noise_seed = 0;

  static AugmentDraw identity() { return {}; }
};

struct AugmentSettings {
  double flip_p = 0.5;
  double brightness_lo = 0.9;
  double brightness_hi = 1.1;
  double noise_p = 0.3;
  double noise_sigma = 0.02;
};

AugmentDraw draw_augment(std::mt19937_64& rng, const AugmentSettings& s = {});
std::pair<Volume, LabelVolume> apply_augment(const Volume& patch, const LabelVolume& mask, const AugmentDraw& draw,
                                             const AugmentSettings& s = {});
std::pair<Volume, LabelVolume> augment(const Volume& patch, const LabelVolume& mask, std::mt19937_64& rng,
                                       const AugmentSettings& s = {});

// ---- patches ---------------------------------------------------------------

struct PatchGrid {
  std::size_t patch = 96;
  std::size_t stride = 48;
  double min_foreground = 0.10;
};

/// Origins at multiples of `stride`, plus one flush-to-end origin when the
/// remainder is not a stride multiple.
std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t stride);

struct Patch {
  std::array<std::size_t, 3> origin{};
  Volume image;
  LabelVolume mask;
};

Volume crop(const Volume& v, std::array<std::size_t, 3> origin, Dims size);
LabelVolume crop(const LabelVolume& v, std::array<std::size_t, 3> origin, Dims size);

/// Cuts patches on the grid and keeps those whose non-rock fraction reaches
/// `min_foreground`.
std::vector<Patch> extract_patches(const Volume& v, const LabelVolume& mask, const PatchGrid& grid);

}  // namespace samamba
