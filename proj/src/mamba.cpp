#include "samamba/mamba.hpp"

#include <cmath>

namespace samamba {

MambaBlock::MambaBlock(ParameterStore& ps, const std::string& name, std::size_t c, std::size_t n,
                       std::size_t kernel)
    : conv_kernel(kernel) {
  norm = make_layer_norm(ps, name + ".norm", c, Role::Trainable);
  in_x = make_linear(ps, name + ".in_x", c, c);
  in_z = make_linear(ps, name + ".in_z", c, c);
  conv.w = ps.add(name + ".conv.w", {c, 1, 1, 1, kernel}, fan_in_init(kernel), Role::Trainable);
  conv.b = ps.add(name + ".conv.b", {c}, Init::zeros(), Role::Trainable);
  conv.groups = c;

  // Step sizes start log-spaced in [1e-3, 1e-1] across channels.
  std::vector<double> dt_bias(c);
  for (std::size_t i = 0; i < c; ++i) {
    double t = c > 1 ? static_cast<double>(i) / static_cast<double>(c - 1) : 0.5;
    double dt0 = std::exp(std::log(1e-3) + t * (std::log(1e-1) - std::log(1e-3)));
    dt_bias[i] = dt0 + std::log(-std::expm1(-dt0));
  }
  dt.w = ps.add(name + ".dt.w", {c, c}, fan_in_init(c), Role::Trainable);
  dt.b = ps.add(name + ".dt.b", {c}, Init::from(dt_bias), Role::Trainable);
  b_proj = make_linear(ps, name + ".b_proj", c, n, Role::Trainable, false);
  c_proj = make_linear(ps, name + ".c_proj", c, n, Role::Trainable, false);

  std::vector<double> alog(c * n);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < n; ++j) alog[i * n + j] = std::log(static_cast<double>(j + 1));
  a_log = ps.add(name + ".a_log", {c, n}, Init::from(alog), Role::Trainable);
  d_skip = ps.add(name + ".d", {c}, Init::constant(1.0), Role::Trainable);
  out = make_linear(ps, name + ".out", c, c);
}

Tensor MambaBlock::operator()(const Tensor& tokens) const {
  const std::size_t T = tokens.dim(0), C = tokens.dim(1);
  Tensor h = norm(tokens);
  Tensor xs = in_x(h);
  Tensor z = in_z(h);

  // Causal depthwise convolution along the sequence.
  Tensor seq = reshape(transpose(xs), {1, C, 1, 1, T});
  seq = pad3d(seq, {0, 0, 0, 0, conv_kernel - 1, 0});
  seq = conv(seq);
  xs = silu(transpose(reshape(seq, {C, T})));

  Tensor delta = softplus(dt(xs));
  Tensor A = scale(exp(a_log), -1.0);
  Tensor y = selective_scan(xs, delta, A, b_proj(xs), c_proj(xs));
  y = add(y, scale_cols(xs, d_skip));
  y = mul(y, silu(z));
  return add(tokens, out(y));
}

MambaBranch::MambaBranch(ParameterStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  const auto& m = cfg.mamba;
  std::size_t prev = cfg.in_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    std::string stage = "mamba.stage" + std::to_string(i);
    down_[i] = make_conv(ps, stage + ".down", prev, m.channels[i], 2, 2, 0);
    for (std::size_t k = 0; k < m.blocks_per_stage; ++k)
      blocks_[i].emplace_back(ps, stage + ".block" + std::to_string(k), m.channels[i], m.state_dim, m.conv_kernel);
    prev = m.channels[i];
  }
  const std::size_t d = m.descriptor();
  desc1_ = make_linear(ps, "mamba.descriptor.fc1", m.channels[3], d);
  desc2_ = make_linear(ps, "mamba.descriptor.fc2", d, d);
  importance_ = make_conv(ps, "mamba.importance", m.channels[2], 1, 1);
  inj1_ = make_linear(ps, "mamba.cond.injection.fc1", d, d);
  inj2_ = make_linear(ps, "mamba.cond.injection.fc2", d, std::max<std::size_t>(cfg.sam.shallow_depths.size(), 1));
  for (std::size_t j = 0; j < 4; ++j) {
    std::string name = "mamba.cond.film" + std::to_string(j);
    const std::size_t c = m.channels[j];
    film1_[j] = make_linear(ps, name + ".fc1", d, d);
    // Zero weights and a (1, 0) bias make the modulation exactly the identity at init.
    std::vector<double> bias(2 * c, 0.0);
    std::fill(bias.begin(), bias.begin() + static_cast<long>(c), 1.0);
    film2_[j].w = ps.add(name + ".fc2.w", {d, 2 * c}, Init::zeros(), Role::Trainable);
    film2_[j].b = ps.add(name + ".fc2.b", {2 * c}, Init::from(bias), Role::Trainable);
  }
}

Pyramid MambaBranch::encode(const Tensor& x) const {
  if (x.ndim() != 5 || x.dim(0) != 1) throw DimensionError("mamba: expects a single [1, C, D, H, W] sample");
  for (std::size_t a = 2; a < 5; ++a)
    if (x.dim(a) % 16 != 0) {
      throw ContractError("mamba: spatial extents must be divisible by 16, got " + shape_str(x.shape()));
    }
  Pyramid p;
  Tensor h = x;
  for (std::size_t i = 0; i < 4; ++i) {
    h = down_[i](h);
    const std::size_t d = h.dim(2), hh = h.dim(3), w = h.dim(4);
    Tensor tokens = to_tokens(h);
    for (const auto& blk : blocks_[i]) tokens = blk(tokens);
    h = from_tokens(tokens, d, hh, w);
    p.s[i] = h;
  }
  return p;
}

Tensor MambaBranch::global_descriptor(const Tensor& s3) const { return desc2_(gelu(desc1_(global_avg_pool(s3)))); }

Tensor MambaBranch::importance_logits(const Tensor& s2) const { return importance_(s2); }

Tensor MambaBranch::importance_map(const Tensor& s2) const { return sigmoid(importance_logits(s2)); }

Conditioning MambaBranch::conditioning(const Tensor& g) const {
  Conditioning c;
  c.injection = sigmoid(inj2_(gelu(inj1_(g))));
  for (std::size_t j = 0; j < 4; ++j) {
    const std::size_t ch = cfg_.mamba.channels[j];
    Tensor gb = film2_[j](gelu(film1_[j](g)));
    c.gamma[j] = slice(gb, 1, 0, ch);
    c.beta[j] = slice(gb, 1, ch, 2 * ch);
  }
  return c;
}

}  // namespace samamba
