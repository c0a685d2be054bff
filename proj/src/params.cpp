#include "samamba/params.hpp"

#include <random>

namespace samamba {

std::string to_string(Role r) {
  switch (r) {
    case Role::Trainable:
      return "trainable";
    case Role::FrozenBackbone:
      return "frozen_backbone";
    case Role::SamNorm:
      return "sam_norm";
    case Role::SamAdapter:
      return "sam_adapter";
    case Role::Lora:
      return "lora";
    case Role::Reverse:
      return "reverse";
  }
  return "?";
}

Role role_from_string(const std::string& s) {
  for (Role r : {Role::Trainable, Role::FrozenBackbone, Role::SamNorm, Role::SamAdapter, Role::Lora, Role::Reverse})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown parameter role '" + s + "'");
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ParameterStore::ParameterStore(std::uint64_t seed, bool materialize) : seed_(seed), materialize_(materialize) {}

Tensor ParameterStore::add(const std::string& name, Shape shape, const Init& init, Role role) {
  if (contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  Param p{name, shape, role, Tensor()};
  if (materialize_) {
    std::size_t n = numel(shape);
    std::vector<double> v(n, 0.0);
    std::mt19937_64 rng(fnv1a(name, fnv1a(std::to_string(seed_))));
    switch (init.kind) {
      case Init::Kind::Zeros:
        break;
      case Init::Kind::Constant:
        std::fill(v.begin(), v.end(), init.a);
        break;
      case Init::Kind::TruncNormal: {
        std::normal_distribution<double> nd(0.0, 1.0);
        for (auto& x : v) {
          double z;
          do z = nd(rng);
          while (std::abs(z) > 2.0);
          x = z * init.a;
        }
        break;
      }
      case Init::Kind::Uniform: {
        std::uniform_real_distribution<double> u(-init.a, init.a);
        for (auto& x : v) x = u(rng);
        break;
      }
      case Init::Kind::Values:
        if (init.values.size() != n) throw DimensionError("parameter '" + name + "': init value count mismatch");
        v = init.values;
        break;
    }
    p.value = Tensor::from(std::move(shape), std::move(v), true);
  }
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back().value;
}

const Param& ParameterStore::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParameterStore::count() const {
  return count([](const Param&) { return true; });
}

std::size_t ParameterStore::count(const std::function<bool(const Param&)>& pred) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (pred(p)) n += numel(p.shape);
  return n;
}

void ParameterStore::set_trainable(const std::function<bool(const Param&)>& pred) {
  for (auto& p : params_)
    if (p.value.defined()) p.value.set_requires_grad(pred(p));
}

void ParameterStore::zero_grad() {
  for (auto& p : params_)
    if (p.value.defined()) p.value.zero_grad();
}

}  // namespace samamba
