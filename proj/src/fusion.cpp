#include "samamba/fusion.hpp"

namespace samamba {

Tensor film_modulate(const Tensor& s, const Tensor& gamma, const Tensor& beta) {
  if (s.ndim() < 2) throw DimensionError("film: expects [B, C, ...]");
  if (gamma.size() != s.dim(1) * s.dim(0) || beta.size() != gamma.size()) {
    throw DimensionError("film: gamma/beta length " + std::to_string(gamma.size()) + " does not match " +
                         std::to_string(s.dim(1)) + " channels");
  }
  return channel_affine(s, gamma, beta);
}

// ---- shallow ---------------------------------------------------------------

ShallowBridge::ShallowBridge(ParameterStore& ps, const std::string& name, std::size_t cm, std::size_t c) {
  proj = make_conv(ps, name + ".proj", cm, c, 1);
  depthwise = make_conv(ps, name + ".local.dw", c, c, 3, 1, 1, c);
  pointwise = make_conv(ps, name + ".local.pw", c, c, 1);
  global = make_linear(ps, name + ".global", c, c);
  gate = make_linear(ps, name + ".gate", 2 * c, 2);
}

ShallowBridge::Output ShallowBridge::combine(const Tensor& f_local, const Tensor& f_global) const {
  Tensor w = softmax(gate(concat({global_avg_pool(f_local), f_global}, 1)), 1);
  const std::size_t c = f_local.dim(1);
  Tensor local = mul_gate(f_local, pick(w, 0));
  Tensor glob = reshape(mul_gate(f_global, pick(w, 1)), {c});
  return {add_channel_bias(local, glob), w};
}

ShallowBridge::Output ShallowBridge::operator()(const Tensor& f_mamba) const {
  Tensor f = proj(f_mamba);
  Tensor f_local = pointwise(depthwise(f));
  Tensor f_global = global(global_avg_pool(f));
  return combine(f_local, f_global);
}

// ---- deep ------------------------------------------------------------------

DeepBridge::DeepBridge(ParameterStore& ps, const std::string& name, std::size_t C, std::size_t c,
                       std::size_t reduction) {
  reverse_proj = make_conv(ps, name + ".reverse.proj", C, c, 1, 1, 0, 1, Role::Reverse);
  reverse_gate = ps.add(name + ".reverse.gate", {1}, Init::zeros(), Role::Reverse);
  sam_proj = make_conv(ps, name + ".fuse.sam_proj", C, c, 1);
  mamba_proj = make_conv(ps, name + ".fuse.mamba_proj", c, c, 1);
  ctx_proj = make_conv(ps, name + ".fuse.ctx_proj", c, c, 1);
  attn_q = make_linear(ps, name + ".fuse.attn.q", c, c);
  attn_k = make_linear(ps, name + ".fuse.attn.k", c, c);
  attn_v = make_linear(ps, name + ".fuse.attn.v", c, c);
  const std::size_t hidden = std::max<std::size_t>(c / reduction, 1);
  se1 = make_linear(ps, name + ".fuse.se.fc1", c, hidden);
  se2 = make_linear(ps, name + ".fuse.se.fc2", hidden, c);
  ca_q = make_linear(ps, name + ".fuse.ca.q", c, c);
  ca_k = make_linear(ps, name + ".fuse.ca.k", c, c);
  ca_v = make_linear(ps, name + ".fuse.ca.v", c, c);
  logits = ps.add(name + ".fuse.logits", {3}, Init::zeros(), Role::Trainable);
}

Tensor DeepBridge::exchange(const Tensor& f_sam, const Tensor& f_mamba) const {
  return add(f_mamba, mul_gate(reverse_proj(f_sam), reverse_gate));
}

DeepBridge::Output DeepBridge::fuse(const Tensor& f_sam, const Tensor& f_mamba, const Tensor& f_ctx) const {
  const std::size_t c = f_mamba.dim(1), d = f_mamba.dim(2), h = f_mamba.dim(3), w = f_mamba.dim(4);
  Tensor sam_t = to_tokens(sam_proj(f_sam));
  Tensor self_attn = attention(attn_q(sam_t), attn_k(sam_t), attn_v(sam_t));

  Tensor m = mamba_proj(f_mamba);
  Tensor excite = sigmoid(se2(gelu(se1(global_avg_pool(m)))));
  Tensor se = channel_affine(m, excite, Tensor::zeros({1, c}));

  Tensor ctx_t = to_tokens(ctx_proj(f_ctx));
  Tensor cross = attention(ca_q(sam_t), ca_k(ctx_t), ca_v(ctx_t));

  Tensor wts = softmax(logits, 0);
  Tensor out = add(add(mul_gate(from_tokens(self_attn, d, h, w), pick(wts, 0)), mul_gate(se, pick(wts, 1))),
                   mul_gate(from_tokens(cross, d, h, w), pick(wts, 2)));
  return {out, wts};
}

// ---- decoder ---------------------------------------------------------------

Decoder::Decoder(ParameterStore& ps, const ModelConfig& cfg) : cfg_(cfg) {
  const auto& c = cfg.mamba.channels;
  const bool fused = !cfg.sam.deep_depths.empty();
  stage_[3] = make_conv(ps, "decoder.stage3", c[3], c[2], 3, 1, 1);
  stage_[2] = make_conv(ps, "decoder.stage2", 2 * c[2], c[1], 3, 1, 1);
  stage_[1] = make_conv(ps, "decoder.stage1", (fused ? 3 : 2) * c[1], c[0], 3, 1, 1);
  stage_[0] = make_conv(ps, "decoder.stage0", 2 * c[0], cfg.head_channels, 3, 1, 1);
  refine1_ = make_conv(ps, "decoder.refine.conv1", cfg.head_channels + cfg.stem_channels, cfg.head_channels, 3, 1, 1);
  refine2_ = make_conv(ps, "decoder.refine.conv2", cfg.head_channels, cfg.head_channels, 3, 1, 1);
  stem_gate_ = ps.add("decoder.stem_gate", {1}, Init::zeros(), Role::Trainable);
  head_conv_ = make_conv(ps, "head.conv", cfg.head_channels, cfg.head_channels, 3, 1, 1);
  head_proj_ = make_conv(ps, "head.proj", cfg.head_channels, cfg.num_classes, 1);
}

Tensor Decoder::stem_refine(const Tensor& x, const Tensor& stem) const {
  Tensor r = refine2_(gelu(refine1_(concat({x, stem}, 1))));
  return add(x, mul_gate(r, stem_gate_));
}

Tensor Decoder::operator()(const Pyramid& skips, const Conditioning& cond, const Tensor& fused,
                           const Tensor& stem) const {
  auto up = [](const Tensor& t) { return upsample_trilinear(t, {2 * t.dim(2), 2 * t.dim(3), 2 * t.dim(4)}); };
  auto skip = [&](std::size_t j) { return film_modulate(skips.s[j], cond.gamma[j], cond.beta[j]); };

  Tensor h = up(gelu(stage_[3](skip(3))));
  h = up(gelu(stage_[2](concat({h, skip(2)}, 1))));
  std::vector<Tensor> parts{h, skip(1)};
  if (fused.defined()) parts.push_back(fused);
  h = up(gelu(stage_[1](concat(parts, 1))));
  h = up(gelu(stage_[0](concat({h, skip(0)}, 1))));
  h = stem_refine(h, stem);
  return head_proj_(gelu(head_conv_(h)));
}

}  // namespace samamba
