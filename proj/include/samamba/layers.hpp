#pragma once

// Thin parameter bundles over the primitives in ops.hpp.

#include <string>

#include "samamba/ops.hpp"
#include "samamba/params.hpp"

namespace samamba {

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out] or undefined

  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct Conv {
  Tensor w;  // [cout, cin/groups, k, k, k]
  Tensor b;  // [cout] or undefined
  std::size_t stride = 1, padding = 0, groups = 1;

  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain, bias;

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

/// Default weight init for trainable layers: truncated normal, std 1/sqrt(fan_in).
Init fan_in_init(std::size_t fan_in);

Linear make_linear(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out, Role role,
                   const Init& w_init, bool bias = true);
Linear make_linear(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out,
                   Role role = Role::Trainable, bool bias = true);
Conv make_conv(ParameterStore& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
               std::size_t stride = 1, std::size_t padding = 0, std::size_t groups = 1, Role role = Role::Trainable,
               bool bias = true);
Conv make_conv(ParameterStore& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
               std::size_t stride, std::size_t padding, std::size_t groups, Role role, const Init& w_init,
               bool bias = true);
LayerNorm make_layer_norm(ParameterStore& ps, const std::string& name, std::size_t c, Role role);

/// Selects element `i` of a [1, n] or [n] tensor as a one-element tensor.
Tensor pick(const Tensor& v, std::size_t i);

}  // namespace samamba
