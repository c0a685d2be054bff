#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "samamba/tensor.hpp"

namespace samamba {

/// Which part of the two-stage schedule a parameter belongs to.
enum class Role {
  Trainable,       // stem, early fusion, Mamba branch, bridges, fusion, decoder, head
  FrozenBackbone,  // SAM attention and MLP projections
  SamNorm,         // SAM layer norms
  SamAdapter,      // 3D adapters inside SAM blocks
  Lora,
  Reverse,         // SAM -> Mamba feedback projections and gates
};

std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct Init {
  enum class Kind { Zeros, Constant, TruncNormal, Uniform, Values };
  Kind kind = Kind::Zeros;
  double a = 0.0;
  std::vector<double> values;

  static Init zeros() { return {}; }
  static Init constant(double v) { return {Kind::Constant, v, {}}; }
  /// Normal(0, std) truncated to +-2 std.
  static Init trunc_normal(double std) { return {Kind::TruncNormal, std, {}}; }
  static Init uniform(double bound) { return {Kind::Uniform, bound, {}}; }
  static Init from(std::vector<double> v) { return {Kind::Values, 0.0, std::move(v)}; }
};

struct Param {
  std::string name;
  Shape shape;
  Role role = Role::Trainable;
  Tensor value;  // undefined when the store does not materialize
};

/// Named model parameters. Each parameter draws its initial values from an RNG
/// seeded by (seed, name), so values do not depend on registration order.
///
/// A non-materializing store only records names and shapes; it is used to
/// count parameters of large configurations without allocating them.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, bool materialize = true);

  Tensor add(const std::string& name, Shape shape, const Init& init, Role role = Role::Trainable);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Param& param(const std::string& name) const;
  Tensor get(const std::string& name) const { return param(name).value; }
  const std::vector<Param>& params() const { return params_; }
  bool materialized() const { return materialize_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t count() const;
  std::size_t count(const std::function<bool(const Param&)>& pred) const;

  /// Sets requires_grad on every parameter according to `pred`.
  void set_trainable(const std::function<bool(const Param&)>& pred);
  void zero_grad();

 private:
  std::uint64_t seed_;
  bool materialize_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

/// Stable 64-bit FNV-1a hash, used to derive per-name RNG streams.
std::uint64_t fnv1a(const std::string& s, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace samamba
