#include "samamba/inference.hpp"

#include <algorithm>
#include <cmath>

#include "samamba/preprocess.hpp"

namespace samamba {

TilePlan plan_tiles(Dims dims, std::size_t patch, double overlap) {
  if (patch == 0) throw ConfigError("plan_tiles: patch must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("plan_tiles: overlap must lie in [0, 1)");
  if (dims.d < patch || dims.h < patch || dims.w < patch)
    throw SizeError("plan_tiles: volume " + to_string(dims) + " is smaller than the patch " + std::to_string(patch));
  TilePlan plan;
  plan.dims = dims;
  plan.patch = patch;
  plan.stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(patch * (1.0 - overlap))));
  auto oz = axis_origins(dims.d, patch, plan.stride);
  auto oy = axis_origins(dims.h, patch, plan.stride);
  auto ox = axis_origins(dims.w, patch, plan.stride);
  for (auto z : oz)
    for (auto y : oy)
      for (auto x : ox) plan.origins.push_back({z, y, x});
  return plan;
}

WeightWindow gaussian_window(std::size_t patch, double sigma) {
  if (patch == 0) throw ConfigError("gaussian_window: patch must be positive");
  if (!(sigma > 0.0)) throw ConfigError("gaussian_window: sigma must be positive");
  WeightWindow w;
  w.patch = patch;
  w.sigma = sigma;
  const double c = (static_cast<double>(patch) - 1.0) / 2.0;
  std::vector<double> g(patch);
  for (std::size_t i = 0; i < patch; ++i) {
    double t = static_cast<double>(i) - c;
    g[i] = std::exp(-t * t / (2.0 * sigma * sigma));
  }
  w.weights.resize(patch * patch * patch);
  for (std::size_t z = 0; z < patch; ++z)
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x)
        w.weights[(z * patch + y) * patch + x] = std::max(g[z] * g[y] * g[x], 1e-8);
  return w;
}

ProbabilityVolume stitch(const std::vector<TileProbs>& tiles, const TilePlan& plan, const WeightWindow& window,
                         std::size_t classes) {
  const std::size_t p = plan.patch, pv = p * p * p;
  if (window.patch != p) throw DimensionError("stitch: window and plan patch sizes differ");
  const Dims d = plan.dims;
  const std::size_t n = d.count();

  std::vector<const TileProbs*> order;
  for (const auto& t : tiles) {
    if (t.probs.size() != classes * pv) throw DimensionError("stitch: tile probability size mismatch");
    if (t.origin[0] + p > d.d || t.origin[1] + p > d.h || t.origin[2] + p > d.w)
      throw SizeError("stitch: tile extends past the volume");
    order.push_back(&t);
  }
  std::stable_sort(order.begin(), order.end(), [](const TileProbs* a, const TileProbs* b) { return a->origin < b->origin; });

  ProbabilityVolume out;
  out.dims = d;
  out.classes = classes;
  out.values.assign(classes * n, 0.0);
  std::vector<double> wsum(n, 0.0);
  for (const TileProbs* t : order) {
    const auto [oz, oy, ox] = t->origin;
    for (std::size_t z = 0; z < p; ++z)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) {
          const std::size_t li = (z * p + y) * p + x, gi = d.index(oz + z, oy + y, ox + x);
          const double w = window.weights[li];
          wsum[gi] += w;
          for (std::size_t c = 0; c < classes; ++c) out.values[c * n + gi] += w * t->probs[c * pv + li];
        }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (!(wsum[v] > 0.0)) throw ContractError("stitch: voxel " + std::to_string(v) + " is not covered by any tile");
    for (std::size_t c = 0; c < classes; ++c) out.values[c * n + v] /= wsum[v];
  }
  return out;
}

LabelVolume argmax_labels(const ProbabilityVolume& probs, Spacing spacing) {
  LabelVolume out(probs.dims, spacing);
  if (probs.classes != out.class_names.size()) {
    out.class_names.clear();
    for (std::size_t c = 0; c < probs.classes; ++c) out.class_names.push_back("class" + std::to_string(c));
  }
  const std::size_t n = probs.dims.count();
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.classes; ++c)
      if (probs.at(c, v) > probs.at(best, v)) best = c;
    out.labels[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Volume prepare_volume(const Volume& v, const DataConfig& data, const ReferenceStats& reference) {
  return harmonize(data.denoise ? nlm_denoise(v, data.nlm) : v, reference);
}

Segmentation segment_volume(const Model& model, const Volume& v, const ReferenceStats& reference, const Config& cfg) {
  v.validate();
  const std::size_t patch = cfg.inference.patch ? cfg.inference.patch : cfg.data.grid.patch;
  const std::size_t K = model.config().num_classes;
  Segmentation seg;
  seg.plan = plan_tiles(v.dims, patch, cfg.inference.overlap);
  Volume x = prepare_volume(v, cfg.data, reference);
  WeightWindow window = gaussian_window(patch, cfg.inference.sigma_fraction * static_cast<double>(patch));

  NoGradGuard ng;
  ForwardOptions opt;
  opt.training = false;
  opt.reverse = true;
  opt.anisotropy = v.spacing.anisotropy();
  const std::size_t pv = patch * patch * patch;
  std::vector<TileProbs> tiles;
  tiles.reserve(seg.plan.origins.size());
  for (const auto& o : seg.plan.origins) {
    Volume c = crop(x, o, {patch, patch, patch});
    Tensor logits = model.forward(Tensor::from({1, 1, patch, patch, patch}, std::move(c.data)), opt);
    auto l = logits.data();
    TileProbs t{o, std::vector<double>(K * pv)};
    for (std::size_t i = 0; i < pv; ++i) {
      double mx = l[i];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, l[k * pv + i]);
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += (t.probs[k * pv + i] = std::exp(l[k * pv + i] - mx));
      for (std::size_t k = 0; k < K; ++k) t.probs[k * pv + i] /= s;
    }
    tiles.push_back(std::move(t));
  }
  seg.probs = stitch(tiles, seg.plan, window, K);
  seg.labels = argmax_labels(seg.probs, v.spacing);
  return seg;
}

void save_probabilities(const std::filesystem::path& base, const ProbabilityVolume& probs, Spacing spacing,
                        const std::vector<std::string>& class_names) {
  const std::size_t n = probs.dims.count();
  for (std::size_t c = 0; c < probs.classes; ++c) {
    Volume pv(probs.dims, spacing);
    std::copy(probs.values.begin() + c * n, probs.values.begin() + (c + 1) * n, pv.data.begin());
    std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    save_volume(base.string() + "_" + name, pv, VoxelType::f32);
  }
}

}  // namespace samamba
