#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/tensor.hpp"
#include "samamba/volume.hpp"

namespace samamba {

/// Per-voxel Euclidean distance (in voxels) to the nearest boundary voxel.
/// A boundary voxel has a face neighbour of another class and gets 0.
/// Volumes without any boundary hold +infinity everywhere.
struct BoundaryField {
  Dims dims;
  std::vector<double> distance;

  bool has_boundary() const;
};

BoundaryField boundary_distance(const std::vector<std::uint8_t>& labels, Dims dims);
BoundaryField boundary_distance(const LabelVolume& labels);

/// Exact squared Euclidean distance transform: distance from each voxel to the
/// nearest voxel with `seed` set. Voxels are unit cubes.
std::vector<double> squared_distance_transform(const std::vector<bool>& seed, Dims dims);

/// w(v) = min(1, d(v) / delta)
std::vector<double> confidence_weights(const BoundaryField& field, double delta);

/// Soft targets laid out class-major: values[c * voxels + v].
struct SoftTargets {
  std::size_t classes = 0;
  std::size_t voxels = 0;
  std::vector<double> values;
  std::vector<double> eta;  // blend factor per voxel, 0 outside the band

  double at(std::size_t c, std::size_t v) const { return values[c * voxels + v]; }
  /// [K, N] constant tensor.
  Tensor tensor() const;
};

/// y where d >= delta, else (1 - eta) y + eta / K with eta = 1 - d / delta.
SoftTargets soften_targets(const std::vector<std::uint8_t>& labels, const BoundaryField& field, std::size_t classes,
                           double delta);

/// w_c = V_total / (K * V_c), with V_c below one voxel clamped to 1.
std::vector<double> class_weights(const SoftTargets& targets);

/// Per-class Dice loss terms 1 - (2 sum p y + eps) / (sum p + sum y + eps). probs: [K, N]. Returns [K].
Tensor dice_terms(const Tensor& probs, const SoftTargets& targets, double eps);
/// Per-class Tversky loss terms 1 - (TP + eps) / (TP + alpha FN + beta FP + eps). Returns [K].
Tensor tversky_terms(const Tensor& probs, const SoftTargets& targets, double alpha, double beta, double eps);

/// (1/K) sum_c w_c * dice_c
Tensor dice_loss(const Tensor& probs, const SoftTargets& targets, const std::vector<double>& weights, double eps);
/// (1/K) sum_c tversky_c
Tensor tversky_loss(const Tensor& probs, const SoftTargets& targets, double alpha, double beta, double eps);

/// sum_v w(v) (1 - p_t)^gamma (-log p_t) / sum_v w(v), with p_t the softmax
/// probability of the hard label. logits: [K, N]. Zero total weight gives 0
/// and a warning.
Tensor focal_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels, const std::vector<double>& weights,
                  double gamma);

struct LossBundle {
  Tensor total;  // differentiable scalar
  double dice = 0.0, tversky = 0.0, focal = 0.0;
  /// Class weights of the last sample in the batch.
  std::vector<double> class_weights;
};

/// Composite objective over a batch. logits: [B, K, D, H, W]; labels hold B
/// consecutive label volumes of D*H*W voxels each. Terms are averaged over the batch.
LossBundle total_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels, const LossConfig& cfg);

}  // namespace samamba
