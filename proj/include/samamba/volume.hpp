#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace samamba {

/// Volume or patch is smaller than the requested window.
class SizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable volume / stats file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dims {
  std::size_t d = 0, h = 0, w = 0;

  std::size_t count() const { return d * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// Voxel spacing in micrometres, axis order (z, y, x).
struct Spacing {
  double z = 1.0, y = 1.0, x = 1.0;

  /// Axial over lateral spacing.
  double anisotropy() const { return z / x; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Scalar field over a z-major voxel grid.
struct Volume {
  Dims dims;
  Spacing spacing;
  std::vector<double> data;

  Volume() = default;
  Volume(Dims d, Spacing s = {}, double fill = 0.0);

  double& at(std::size_t z, std::size_t y, std::size_t x) { return data[dims.index(z, y, x)]; }
  double at(std::size_t z, std::size_t y, std::size_t x) const { return data[dims.index(z, y, x)]; }

  /// Throws ConfigError unless every spacing component is positive and finite.
  void validate() const;
};

/// Per-voxel class labels in {0..K-1}. Class 0 is the solid (rock) phase.
struct LabelVolume {
  Dims dims;
  Spacing spacing;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> class_names{"rock", "brine", "oil"};

  LabelVolume() = default;
  LabelVolume(Dims d, Spacing s = {}, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t z, std::size_t y, std::size_t x) { return labels[dims.index(z, y, x)]; }
  std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const { return labels[dims.index(z, y, x)]; }
  std::size_t num_classes() const { return class_names.size(); }
};

enum class VoxelType { f32, u8, u16 };

std::string to_string(VoxelType t);
VoxelType voxel_type_from_string(const std::string& s);

/// Writes `<base>.json` (sidecar) and `<base>.raw` (little-endian, z-major).
/// `base` may carry a `.json` or `.raw` extension; it is stripped.
void save_volume(const std::filesystem::path& base, const Volume& v, VoxelType type = VoxelType::f32);
void save_labels(const std::filesystem::path& base, const LabelVolume& v);
Volume load_volume(const std::filesystem::path& base);
LabelVolume load_labels(const std::filesystem::path& base, std::vector<std::string> class_names = {"rock", "brine", "oil"});

/// Sidecar paths for a base name.
std::filesystem::path sidecar_path(const std::filesystem::path& base);
std::filesystem::path raw_path(const std::filesystem::path& base);

}  // namespace samamba
