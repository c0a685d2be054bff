#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "samamba/config.hpp"
#include "samamba/params.hpp"

namespace samamba {

enum class Stage { A, B };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Epoch ranges of the progressive unfreezing schedule.
struct StagePlan {
  std::size_t stage_a_epochs = 30;
  std::size_t max_epochs = 200;

  Stage stage_at(std::size_t epoch) const { return epoch < stage_a_epochs ? Stage::A : Stage::B; }
  /// Stage A trains only Role::Trainable; Stage B adds norms, adapters, LoRA
  /// and the reverse pathway. The SAM backbone is never trained.
  static bool trains(Role role, Stage stage);
  /// The reverse pathway runs only while its gates are being trained.
  static bool reverse_enabled(Stage stage) { return stage == Stage::B; }
};

StagePlan stage_plan(const ScheduleConfig& s);

/// Names of the parameters updated at `epoch`, in registration order.
std::vector<std::string> stage_trainable_set(const ParameterStore& store, std::size_t epoch, const StagePlan& plan);

/// Sets requires_grad on every parameter of the store to match the stage.
void apply_stage(ParameterStore& store, Stage stage);

struct Moments {
  std::vector<double> m, v;
  std::uint64_t steps = 0;  // updates this parameter has received
};

/// AdamW state. Moments are created lazily, zero-initialized, the first time a
/// parameter is updated; bias correction uses the per-parameter step count.
struct OptimizerState {
  OptimConfig cfg;
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;
};

/// Sum of squared gradients over the parameters with requires_grad.
double grad_norm(const ParameterStore& store);

/// Rescales gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping. `max_norm` <= 0 disables clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

/// One AdamW update of every parameter with requires_grad. Frozen parameters
/// are left untouched, including weight decay. Throws NumericError, leaving
/// all parameters unchanged, if any gradient is not finite.
void adamw_step(ParameterStore& store, OptimizerState& state);

/// Single-tensor form of the update, used by the store version.
void adamw_update(std::span<double> w, std::span<const double> g, Moments& mom, const OptimConfig& cfg);

/// Patience-based early stopping on the validation loss.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience = 20, double min_delta = 1e-6, std::size_t max_epochs = 200);
  explicit EarlyStopper(const ScheduleConfig& s) : EarlyStopper(s.patience, s.min_delta, s.max_epochs) {}

  /// Records the loss of the next epoch; returns true when training should stop.
  bool update(double val_loss);
  /// True when the last recorded epoch set a new best.
  bool improved() const { return improved_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t stagnant() const { return stagnant_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_, max_epochs_;
  double min_delta_;
  double best_;
  std::size_t best_epoch_ = 0, stagnant_ = 0, epochs_ = 0;
  bool improved_ = false;
};

}  // namespace samamba
