#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "samamba/volume.hpp"

namespace samamba {

struct OverlapReport {
  std::vector<double> dice, iou;  // per class
  double macro_dice = 0.0, macro_iou = 0.0;
};

/// Per-class DSC = 2|P n G| / (|P| + |G|) and IoU = |P n G| / |P u G| over
/// classes 0..classes-1; a class absent from both scores 1. Macro averages
/// include every class.
OverlapReport overlap(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                      std::size_t classes);
OverlapReport overlap(const LabelVolume& pred, const LabelVolume& truth);

struct Fractions {
  double porosity = 0.0;             // non-rock voxels over all voxels
  std::vector<double> saturation;    // per fluid class 1..K-1, over non-rock voxels
};

/// Fractions in [0, 1]. Throws ContractError when there are no pore voxels.
Fractions fractions(const LabelVolume& labels);

/// Number of face-adjacent voxel pairs with one voxel of class a and the other of class b, per axis (z, y, x).
std::array<std::uint64_t, 3> interface_faces(const LabelVolume& labels, std::uint8_t a, std::uint8_t b);

/// Interface area in square micrometres between classes a and b.
double interfacial_area(const LabelVolume& labels, std::uint8_t a, std::uint8_t b);

/// Euler characteristic V - E + F - C of the cubical complex formed by the
/// foreground voxels as closed unit cubes.
std::int64_t euler_number(const std::vector<bool>& mask, Dims dims);
std::int64_t euler_number(const LabelVolume& labels, const std::vector<std::uint8_t>& classes);

/// Pore-scale properties of a rock / brine / oil labelling.
struct PropertyReport {
  double porosity_pct = 0.0;
  double brine_saturation_pct = 0.0;
  double oil_saturation_pct = 0.0;
  double area_oil_brine = 0.0;
  double area_brine_grain = 0.0;
  double area_oil_grain = 0.0;
  double area_grain = 0.0;
  std::int64_t euler_pore = 0;
  std::int64_t euler_brine = 0;
  std::int64_t euler_oil = 0;

  /// (label, value, unit) rows in report order.
  std::vector<std::tuple<std::string, double, std::string>> rows() const;
  std::string table() const;
  std::string json() const;
};

/// Expects class 0 = rock, 1 = brine, 2 = oil; uses the volume's spacing for areas.
PropertyReport property_report(const LabelVolume& labels);

}  // namespace samamba
