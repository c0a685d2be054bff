#include "samamba/layers.hpp"

#include <cmath>

namespace samamba {

Tensor Conv::operator()(const Tensor& x) const {
  Tensor y = conv3d(x, w, stride, padding, groups);
  return b.defined() ? add_channel_bias(y, b) : y;
}

Init fan_in_init(std::size_t fan_in) { return Init::trunc_normal(1.0 / std::sqrt(static_cast<double>(fan_in))); }

Linear make_linear(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out, Role role,
                   const Init& w_init, bool bias) {
  Linear l;
  l.w = ps.add(name + ".w", {in, out}, w_init, role);
  if (bias) l.b = ps.add(name + ".b", {out}, Init::zeros(), role);
  return l;
}

Linear make_linear(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out, Role role,
                   bool bias) {
  return make_linear(ps, name, in, out, role, fan_in_init(in), bias);
}

Conv make_conv(ParameterStore& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
               std::size_t stride, std::size_t padding, std::size_t groups, Role role, const Init& w_init, bool bias) {
  if (cin % groups != 0 || cout % groups != 0) throw ConfigError(name + ": channels not divisible by groups");
  Conv c;
  c.w = ps.add(name + ".w", {cout, cin / groups, k, k, k}, w_init, role);
  if (bias) c.b = ps.add(name + ".b", {cout}, Init::zeros(), role);
  c.stride = stride;
  c.padding = padding;
  c.groups = groups;
  return c;
}

Conv make_conv(ParameterStore& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
               std::size_t stride, std::size_t padding, std::size_t groups, Role role, bool bias) {
  return make_conv(ps, name, cin, cout, k, stride, padding, groups, role, fan_in_init(cin / groups * k * k * k), bias);
}

LayerNorm make_layer_norm(ParameterStore& ps, const std::string& name, std::size_t c, Role role) {
  return {ps.add(name + ".g", {c}, Init::constant(1.0), role), ps.add(name + ".b", {c}, Init::zeros(), role)};
}

Tensor pick(const Tensor& v, std::size_t i) {
  Tensor flat = v.ndim() == 1 ? v : reshape(v, {v.size()});
  return slice(flat, 0, i, i + 1);
}

}  // namespace samamba
