#include "samamba/optim.hpp"

#include <cmath>
#include <limits>

namespace samamba {

std::string to_string(Stage s) { return s == Stage::A ? "A" : "B"; }

Stage stage_from_string(const std::string& s) {
  if (s == "A") return Stage::A;
  if (s == "B") return Stage::B;
  throw ConfigError("unknown stage '" + s + "'");
}

bool StagePlan::trains(Role role, Stage stage) {
  switch (role) {
    case Role::Trainable:
      return true;
    case Role::FrozenBackbone:
      return false;
    case Role::SamNorm:
    case Role::SamAdapter:
    case Role::Lora:
    case Role::Reverse:
      return stage == Stage::B;
  }
  return false;
}

StagePlan stage_plan(const ScheduleConfig& s) {
  if (s.max_epochs == 0) throw ConfigError("schedule: max_epochs must be positive");
  return {s.stage_a_epochs, s.max_epochs};
}

std::vector<std::string> stage_trainable_set(const ParameterStore& store, std::size_t epoch, const StagePlan& plan) {
  Stage st = plan.stage_at(epoch);
  std::vector<std::string> out;
  for (const auto& p : store.params())
    if (StagePlan::trains(p.role, st)) out.push_back(p.name);
  return out;
}

void apply_stage(ParameterStore& store, Stage stage) {
  store.set_trainable([stage](const Param& p) { return StagePlan::trains(p.role, stage); });
}

double grad_norm(const ParameterStore& store) {
  double s = 0.0;
  for (const auto& p : store.params()) {
    if (!p.value.defined() || !p.value.requires_grad()) continue;
    for (double g : p.value.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double n = grad_norm(store);
  if (max_norm <= 0.0 || !(n > max_norm)) return n;
  double scale = max_norm / (n + 1e-12);
  for (const auto& p : store.params()) {
    if (!p.value.defined() || !p.value.requires_grad()) continue;
    auto& g = p.value.node()->grad;
    for (double& x : g) x *= scale;
  }
  return n;
}

void adamw_update(std::span<double> w, std::span<const double> g, Moments& mom, const OptimConfig& cfg) {
  if (mom.m.size() != w.size()) {
    mom.m.assign(w.size(), 0.0);
    mom.v.assign(w.size(), 0.0);
  }
  ++mom.steps;
  const double t = static_cast<double>(mom.steps);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] -= cfg.lr * cfg.weight_decay * w[i];
    mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
    mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    double mh = mom.m[i] / bc1, vh = mom.v[i] / bc2;
    w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

void adamw_step(ParameterStore& store, OptimizerState& state) {
  for (const auto& p : store.params()) {
    if (!p.value.defined() || !p.value.requires_grad()) continue;
    auto g = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw NumericError("adamw: non-finite gradient in '" + p.name + "' at element " + std::to_string(i) +
                           "; step aborted");
  }
  for (const auto& p : store.params()) {
    if (!p.value.defined() || !p.value.requires_grad()) continue;
    Tensor w = p.value;
    adamw_update(w.mutable_data(), w.grad(), state.moments[p.name], state.cfg);
  }
  ++state.step;
}

EarlyStopper::EarlyStopper(std::size_t patience, double min_delta, std::size_t max_epochs)
    : patience_(patience), max_epochs_(max_epochs), min_delta_(min_delta), best_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw ConfigError("early stopping: patience must be positive");
}

bool EarlyStopper::update(double val_loss) {
  improved_ = val_loss < best_ - min_delta_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epochs_;
    stagnant_ = 0;
  } else {
    ++stagnant_;
  }
  ++epochs_;
  return stagnant_ >= patience_ || epochs_ >= max_epochs_;
}

}  // namespace samamba
