#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "samamba/volume.hpp"

namespace samamba {

/// The porosity target could not be reached.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PhantomKind { SpherePack, LayeredBed, DropletField, WettingFilm };

std::string to_string(PhantomKind k);
PhantomKind phantom_kind_from_string(const std::string& s);

struct PhantomSpec {
  PhantomKind kind = PhantomKind::SpherePack;
  Dims dims{64, 64, 64};
  Spacing spacing;
  double porosity = 0.5;
  /// Share of the pore space filled with oil (ignored by wetting-film).
  double oil_fraction = 0.4;
  double grain_radius_min = 5.0;
  double grain_radius_max = 9.0;
  double droplet_radius_min = 1.5;
  double droplet_radius_max = 3.0;
  double blur_sigma = 0.7;   // voxels; 0 disables
  double noise_sigma = 0.03;
  std::array<double, 3> gray{0.8, 0.5, 0.2};  // rock, brine, oil
  std::uint64_t seed = 0;
  std::size_t max_attempts = 200000;
};

struct Phantom {
  Volume image;
  LabelVolume truth;  // before blur and noise
  double porosity = 0.0;
  std::size_t grains = 0;
};

/// Non-overlapping spherical grains are added by rejection sampling until the
/// porosity is within one percentage point of the target; the pore space is
/// then split into brine and oil according to the kind:
///   sphere-pack, layered-bed  oil fills the pore voxels farthest from the grains
///   droplet-field             isolated spherical oil droplets inside the brine
///   wetting-film              brine one voxel deep on grain surfaces, oil elsewhere
/// layered-bed alternates fine and coarse grain layers along z.
Phantom generate_phantom(const PhantomSpec& spec);

/// Separable Gaussian filter with edge replication.
Volume gaussian_blur(const Volume& v, double sigma);

}  // namespace samamba
