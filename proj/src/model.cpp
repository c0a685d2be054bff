#include "samamba/model.hpp"

#include <algorithm>
#include <cmath>

namespace samamba {

namespace {

bool contains(const std::vector<std::size_t>& v, std::size_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::size_t position(const std::vector<std::size_t>& v, std::size_t x) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
}

Tensor resample_to(const Tensor& t, std::array<std::size_t, 3> grid) {
  if (t.dim(2) == grid[0] && t.dim(3) == grid[1] && t.dim(4) == grid[2]) return t;
  return upsample_trilinear(t, grid);
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed, bool materialize)
    : cfg_(cfg), params_(std::make_unique<ParameterStore>(seed, materialize)) {
  cfg_.validate();
  auto& ps = *params_;
  stem_ = make_conv(ps, "stem.conv", cfg.in_channels, cfg.stem_channels, 3, 1, 1);
  mamba_ = MambaBranch(ps, cfg_);
  sam_ = SamBranch(ps, cfg_);
  for (std::size_t i = 0; i < cfg.sam.shallow_depths.size(); ++i)
    shallow_.emplace_back(ps, "bridge.shallow" + std::to_string(i), cfg.mamba.channels[1], cfg.sam.embed_dim);
  for (std::size_t i = 0; i < cfg.sam.deep_depths.size(); ++i)
    deep_.emplace_back(ps, "bridge.deep" + std::to_string(i), cfg.sam.embed_dim, cfg.mamba.channels[1],
                       cfg.se_reduction);
  decoder_ = Decoder(ps, cfg_);
}

Tensor Model::forward(const Tensor& x, const ForwardOptions& opt, ForwardTrace* trace) const {
  if (!params_->materialized()) throw ContractError("model: parameters were not materialized");
  if (x.ndim() != 5 || x.dim(1) != cfg_.in_channels)
    throw DimensionError("model: expects [B, " + std::to_string(cfg_.in_channels) + ", D, H, W], got " +
                         shape_str(x.shape()));
  if (x.dim(0) == 1) return forward_one(x, opt, trace);
  std::vector<Tensor> outs;
  for (std::size_t b = 0; b < x.dim(0); ++b) outs.push_back(forward_one(slice(x, 0, b, b + 1), opt, trace));
  return concat(outs, 0);
}

Tensor Model::forward_one(const Tensor& x, const ForwardOptions& opt, ForwardTrace* trace) const {
  const auto& sc = cfg_.sam;
  Tensor stem = gelu(stem_(x));
  Pyramid pyr = mamba_.encode(x);
  Tensor g = mamba_.global_descriptor(pyr.s[3]);
  Tensor m = mamba_.importance_map(pyr.s[2]);
  Conditioning cond = mamba_.conditioning(g);

  Tensor xp = sam_.early_fuse(x, pyr.s[0]);
  Tensor grid_t = sam_.embed(xp);
  std::array<std::size_t, 3> grid{grid_t.dim(2), grid_t.dim(3), grid_t.dim(4)};
  Tensor tokens = sam_.add_position(to_tokens(grid_t), grid, opt.anisotropy);

  Tensor m_tok = importance_to_tokens(m, grid);
  const double tau = opt.route_threshold >= 0.0 ? opt.route_threshold : sc.route_threshold;
  Routing routing = route_tokens(m_tok.data(), tau);

  if (trace) {
    *trace = ForwardTrace{};
    trace->pyramid = pyr;
    trace->descriptor = g;
    trace->importance = m;
    trace->token_importance = m_tok;
    trace->conditioning = cond;
    trace->stem = stem;
    trace->early_fused = xp;
    trace->full_tokens = routing.full.size();
    trace->light_tokens = routing.light.size();
  }

  Tensor s1 = pyr.s[1];
  std::array<std::size_t, 3> s1_grid{s1.dim(2), s1.dim(3), s1.dim(4)};
  Tensor fused;
  for (std::size_t l = 0; l < sc.depth; ++l) {
    if (contains(sc.shallow_depths, l)) {
      std::size_t i = position(sc.shallow_depths, l);
      auto inj = shallow_[i](resample_to(pyr.s[1], grid));
      tokens = add(tokens, mul_gate(to_tokens(inj.features), pick(cond.injection, i)));
      if (trace) trace->shallow_weights.push_back(inj.weights);
    }
    tokens = sam_.block(l, tokens, m_tok, routing, grid, opt);
    if (contains(sc.deep_depths, l)) {
      std::size_t j = position(sc.deep_depths, l);
      Tensor f_sam = resample_to(from_tokens(tokens, grid[0], grid[1], grid[2]), s1_grid);
      if (opt.reverse) s1 = deep_[j].exchange(f_sam, s1);
      Tensor ctx = fused.defined() ? fused : s1;
      auto out = deep_[j].fuse(f_sam, s1, ctx);
      fused = out.fused;
      if (trace) {
        trace->sam_exports.push_back(f_sam);
        trace->fused.push_back(fused);
        trace->fusion_weights.push_back(out.weights);
      }
    }
  }

  Pyramid skips = pyr;
  skips.s[1] = s1;
  if (trace) trace->s1_updated = s1;
  return decoder_(skips, cond, fused, stem);
}

std::uint64_t Model::estimate_macs(std::array<std::size_t, 3> patch, double full_fraction, bool reverse) const {
  using u64 = std::uint64_t;
  const auto& mc = cfg_.mamba;
  const auto& sc = cfg_.sam;
  const u64 V = static_cast<u64>(patch[0]) * patch[1] * patch[2];
  const u64 in = cfg_.in_channels, hc = cfg_.head_channels, stc = cfg_.stem_channels, K = cfg_.num_classes;
  std::array<u64, 4> vol{}, ch{};
  for (std::size_t i = 0; i < 4; ++i) {
    vol[i] = V >> (3 * (i + 1));
    ch[i] = mc.channels[i];
  }
  const u64 d = mc.descriptor(), N = mc.state_dim, kc = mc.conv_kernel;

  u64 macs = stc * V * in * 27;  // stem
  u64 prev = in;
  for (std::size_t i = 0; i < 4; ++i) {
    const u64 c = ch[i], T = vol[i];
    macs += c * T * prev * 8;
    macs += mc.blocks_per_stage * T * (4 * c * c + c * kc + 5 * c * N);
    prev = c;
  }
  macs += ch[3] * d + d * d;                          // descriptor
  macs += vol[2] * ch[2];                             // importance head
  macs += d * d + d * std::max<u64>(sc.shallow_depths.size(), 1);  // injection strengths
  for (std::size_t j = 0; j < 4; ++j) macs += d * d + d * 2 * ch[j];  // FiLM heads

  const u64 C = sc.embed_dim, p = sc.patch, r = sc.lora_rank, a = sc.adapter_dim;
  const u64 T = V / (p * p * p);
  const auto Tf = static_cast<u64>(std::llround(full_fraction * static_cast<double>(T)));
  macs += in * V * ch[0];         // early fusion projection
  macs += C * T * in * p * p * p;  // patch embedding
  for (std::size_t l = 0; l < sc.depth; ++l) {
    macs += 4 * Tf * C * C + 4 * Tf * C * r + 2 * Tf * Tf * C;
    macs += 2 * T * C * C * sc.mlp_ratio;
    macs += T * C * a + a * T * 27 + T * a * C;
  }
  const u64 c1 = ch[1], T1 = vol[1];
  macs += sc.shallow_depths.size() * (C * T * c1 + C * T * 27 + C * T * C + C * C + 2 * C * 2);
  const u64 se_h = std::max<u64>(c1 / cfg_.se_reduction, 1);
  for (std::size_t j = 0; j < sc.deep_depths.size(); ++j) {
    if (reverse) macs += c1 * T1 * C;
    macs += c1 * T1 * C + 2 * c1 * T1 * c1;  // sam, mamba, ctx projections
    macs += 3 * T1 * c1 * c1 + 2 * T1 * T1 * c1;
    macs += 2 * c1 * se_h;
    macs += T1 * c1 * c1 + 2 * T1 * c1 * c1 + 2 * T1 * T1 * c1;
  }
  const u64 fused = sc.deep_depths.empty() ? 2 : 3;
  macs += ch[2] * vol[3] * ch[3] * 27;
  macs += ch[1] * vol[2] * 2 * ch[2] * 27;
  macs += ch[0] * vol[1] * fused * ch[1] * 27;
  macs += hc * vol[0] * 2 * ch[0] * 27;
  macs += hc * V * (hc + stc) * 27 + hc * V * hc * 27;  // stem refinement
  macs += hc * V * hc * 27 + K * V * hc;               // head
  return macs;
}

}  // namespace samamba
