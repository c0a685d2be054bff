#include "samamba/sam.hpp"

#include <cmath>
#include <numbers>

namespace samamba {

Tensor lora_delta(const Tensor& x, const Tensor& a, const Tensor& b, double alpha, double dropout_rate, bool training,
                  std::mt19937_64* rng) {
  const std::size_t r = a.dim(1);
  Tensor h = linear(x, a);
  if (training && dropout_rate > 0.0) {
    if (!rng) throw ContractError("lora: training-mode dropout needs an RNG stream");
    h = dropout(h, dropout_rate, true, *rng);
  }
  return scale(linear(h, b), alpha / static_cast<double>(r));
}

Tensor positional_bias(std::size_t channels, std::size_t depth, double rho, double scale_s) {
  if (!(scale_s > 0.0)) throw ConfigError("positional_bias: base scale must be positive");
  std::vector<double> v(channels * depth);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t z = 0; z < depth; ++z) {
      double freq = 2.0 * std::numbers::pi * static_cast<double>(c + 1) / static_cast<double>(channels);
      v[c * depth + z] = std::sin(freq * rho * static_cast<double>(z) / scale_s);
    }
  return Tensor::from({channels, depth}, std::move(v));
}

Routing route_tokens(std::span<const double> importance, double tau) {
  Routing r;
  for (std::size_t t = 0; t < importance.size(); ++t) (importance[t] >= tau ? r.full : r.light).push_back(t);
  return r;
}

Tensor importance_to_tokens(const Tensor& m, std::array<std::size_t, 3> grid) {
  if (m.ndim() != 5 || m.dim(0) != 1 || m.dim(1) != 1) throw DimensionError("importance map must be [1, 1, d, h, w]");
  Tensor g = m;
  if (m.dim(2) < grid[0]) {
    std::size_t f = grid[0] / m.dim(2);
    if (f * m.dim(2) != grid[0] || m.dim(3) * f != grid[1] || m.dim(4) * f != grid[2])
      throw DimensionError("importance map does not divide the token grid");
    g = upsample_nearest(m, f);
  } else if (m.dim(2) > grid[0]) {
    std::size_t f = m.dim(2) / grid[0];
    if (f * grid[0] != m.dim(2) || grid[1] * f != m.dim(3) || grid[2] * f != m.dim(4))
      throw DimensionError("token grid does not divide the importance map");
    g = avg_pool3d(m, f);
  } else if (m.dim(3) != grid[1] || m.dim(4) != grid[2]) {
    throw DimensionError("importance map and token grid disagree");
  }
  return reshape(g, {grid[0] * grid[1] * grid[2]});
}

SamBranch::SamBranch(ParameterStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  const auto& s = cfg.sam;
  const std::size_t C = s.embed_dim;
  const Init base = Init::trunc_normal(s.init_std);
  early_proj_ = make_conv(ps, "early.proj", cfg.mamba.channels[0], cfg.in_channels, 1);
  early_lambda_ = ps.add("early.lambda", {1}, Init::constant(cfg.early_lambda_init), Role::Trainable);
  embed_ = make_conv(ps, "sam.embed", cfg.in_channels, C, s.patch, s.patch, 0, 1, Role::Trainable, base);

  for (std::size_t l = 0; l < s.depth; ++l) {
    const std::string p = "sam.block" + std::to_string(l);
    SamBlock b;
    b.ln1 = make_layer_norm(ps, p + ".ln1", C, Role::SamNorm);
    b.ln2 = make_layer_norm(ps, p + ".ln2", C, Role::SamNorm);
    b.q = make_linear(ps, p + ".attn.q", C, C, Role::FrozenBackbone, base);
    b.k = make_linear(ps, p + ".attn.k", C, C, Role::FrozenBackbone, base);
    b.v = make_linear(ps, p + ".attn.v", C, C, Role::FrozenBackbone, base);
    b.o = make_linear(ps, p + ".attn.o", C, C, Role::FrozenBackbone, base);
    const Init a_init = Init::uniform(1.0 / std::sqrt(static_cast<double>(C)));
    b.lora_q = {ps.add(p + ".attn.q.lora_A", {C, s.lora_rank}, a_init, Role::Lora),
                ps.add(p + ".attn.q.lora_B", {s.lora_rank, C}, Init::zeros(), Role::Lora)};
    b.lora_v = {ps.add(p + ".attn.v.lora_A", {C, s.lora_rank}, a_init, Role::Lora),
                ps.add(p + ".attn.v.lora_B", {s.lora_rank, C}, Init::zeros(), Role::Lora)};
    b.fc1 = make_linear(ps, p + ".mlp.fc1", C, C * s.mlp_ratio, Role::FrozenBackbone, base);
    b.fc2 = make_linear(ps, p + ".mlp.fc2", C * s.mlp_ratio, C, Role::FrozenBackbone, base);
    b.adapter_down = make_linear(ps, p + ".adapter.down", C, s.adapter_dim, Role::SamAdapter);
    b.adapter_dw = make_conv(ps, p + ".adapter.dw", s.adapter_dim, s.adapter_dim, 3, 1, 1, s.adapter_dim,
                             Role::SamAdapter);
    b.adapter_up = make_linear(ps, p + ".adapter.up", s.adapter_dim, C, Role::SamAdapter, Init::zeros());
    blocks_.push_back(b);
  }
}

Tensor SamBranch::early_fuse(const Tensor& x, const Tensor& s0) const {
  Tensor up = upsample_trilinear(s0, {x.dim(2), x.dim(3), x.dim(4)});
  return add(x, mul_gate(early_proj_(up), abs(early_lambda_)));
}

Tensor SamBranch::embed(const Tensor& x) const {
  const std::size_t p = cfg_.sam.patch;
  for (std::size_t a = 2; a < 5; ++a)
    if (x.dim(a) % p != 0) {
      throw ContractError("embed: extents must be divisible by " + std::to_string(p) + ", got " +
                          shape_str(x.shape()));
    }
  return embed_(x);
}

Tensor SamBranch::add_position(const Tensor& tokens, std::array<std::size_t, 3> grid, double rho) const {
  const std::size_t C = tokens.dim(1);
  const double s = cfg_.sam.pos_scale > 0.0 ? cfg_.sam.pos_scale : static_cast<double>(grid[0]);
  Tensor b = positional_bias(C, grid[0], rho, s);
  auto bd = b.data();
  const std::size_t plane = grid[1] * grid[2];
  std::vector<double> full(tokens.size());
  for (std::size_t t = 0; t < tokens.dim(0); ++t) {
    std::size_t z = t / plane;
    for (std::size_t c = 0; c < C; ++c) full[t * C + c] = bd[c * grid[0] + z];
  }
  return add(tokens, Tensor::from(tokens.shape(), std::move(full)));
}

Tensor SamBranch::block(std::size_t l, const Tensor& tokens, const Tensor& importance, const Routing& routing,
                        std::array<std::size_t, 3> grid, const ForwardOptions& opt) const {
  const auto& b = blocks_.at(l);
  const auto& s = cfg_.sam;
  const std::size_t T = tokens.dim(0), C = tokens.dim(1), H = s.heads, dh = C / H;
  Tensor x = tokens;

  if (!routing.full.empty()) {
    const std::size_t tf = routing.full.size();
    Tensor h = b.ln1(x);
    Tensor hf = tf == T ? h : gather_rows(h, routing.full);
    Tensor q = b.q(hf), k = b.k(hf), v = b.v(hf);
    if (opt.adapters) {
      q = add(q, lora_delta(hf, b.lora_q.a, b.lora_q.b, s.lora_alpha, s.lora_dropout, opt.training, opt.rng));
      v = add(v, lora_delta(hf, b.lora_v.a, b.lora_v.b, s.lora_alpha, s.lora_dropout, opt.training, opt.rng));
    }
    auto heads = [&](const Tensor& t) { return permute(reshape(t, {tf, H, dh}), {1, 0, 2}); };
    Tensor a = attention(heads(q), heads(k), heads(v));
    a = b.o(reshape(permute(a, {1, 0, 2}), {tf, C}));
    // Scaling by the routing score keeps the importance head on the gradient path.
    Tensor m = reshape(gather_rows(reshape(importance, {T, 1}), routing.full), {tf});
    a = scale_rows(a, m);
    x = add(x, tf == T ? a : scatter_rows(a, routing.full, T));
  }

  x = add(x, b.fc2(gelu(b.fc1(b.ln2(x)))));

  if (opt.adapters) {
    Tensor a = from_tokens(b.adapter_down(x), grid[0], grid[1], grid[2]);
    a = to_tokens(gelu(b.adapter_dw(a)));
    x = add(x, b.adapter_up(a));
  }
  return x;
}

}  // namespace samamba
