#include "samamba/loss.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "samamba/ops.hpp"

namespace samamba {

namespace {

constexpr double kFar = 1e30;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line.
void edt_line(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    const double fq = f[q] + static_cast<double>(q * q);
    auto intersect = [&](std::size_t p) {
      return (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
    };
    double s = intersect(v[k]);
    while (s <= z[k]) s = intersect(v[--k]);  // z[0] = -inf stops this
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = std::min(kFar, diff * diff + f[v[k]]);
  }
}

// Weighted sum of (1 - exp(q))^gamma * (-q), normalized by the weight total.
Tensor focal_core(const Tensor& log_pt, std::vector<double> w, double gamma) {
  double wsum = 0.0;
  for (double x : w) wsum += x;
  auto q = log_pt.data();
  if (wsum <= 0.0) {
    spdlog::warn("focal loss: every voxel has zero confidence weight; term set to 0");
    return detail::make_result({1}, {0.0}, "focal", {log_pt}, [](detail::Node&) {});
  }
  double acc = 0.0;
  for (std::size_t v = 0; v < q.size(); ++v) {
    if (w[v] == 0.0) continue;
    const double p = std::exp(q[v]);
    acc += w[v] * std::pow(1.0 - p, gamma) * (-q[v]);
  }
  return detail::make_result({1}, {acc / wsum}, "focal", {log_pt}, [w = std::move(w), wsum, gamma](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    const auto& qd = detail::input_data(self, 0);
    const double scale = self.grad[0] / wsum;
    for (std::size_t v = 0; v < qd.size(); ++v) {
      if (w[v] == 0.0) continue;
      const double p = std::exp(qd[v]), m = 1.0 - p;
      const double dq = gamma * std::pow(m, gamma - 1.0) * p * qd[v] - std::pow(m, gamma);
      g[v] += scale * w[v] * dq;
    }
  });
}

void check_probs(const Tensor& probs, const SoftTargets& t, const char* what) {
  if (probs.ndim() != 2 || probs.dim(0) != t.classes || probs.dim(1) != t.voxels)
    throw DimensionError(std::string(what) + ": probabilities " + shape_str(probs.shape()) + " do not match targets [" +
                         std::to_string(t.classes) + ", " + std::to_string(t.voxels) + "]");
}

struct Sums {
  Tensor inter, pred;
  std::vector<double> target;
};

Sums class_sums(const Tensor& probs, const SoftTargets& t) {
  Sums s;
  s.inter = sum_axis(mul(probs, t.tensor()), 1);
  s.pred = sum_axis(probs, 1);
  s.target.assign(t.classes, 0.0);
  for (std::size_t c = 0; c < t.classes; ++c)
    for (std::size_t v = 0; v < t.voxels; ++v) s.target[c] += t.at(c, v);
  return s;
}

}  // namespace

bool BoundaryField::has_boundary() const {
  return std::any_of(distance.begin(), distance.end(), [](double d) { return d == 0.0; });
}

std::vector<double> squared_distance_transform(const std::vector<bool>& seed, Dims dims) {
  if (seed.size() != dims.count()) throw DimensionError("distance transform: mask size does not match dims");
  std::vector<double> g(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] = seed[i] ? 0.0 : kFar;
  const std::size_t D = dims.d, H = dims.h, W = dims.w;
  std::vector<std::size_t> v;
  std::vector<double> z, f, out;
  auto pass = [&](std::size_t n, std::size_t lines, auto index) {
    f.resize(n);
    out.resize(n);
    for (std::size_t l = 0; l < lines; ++l) {
      for (std::size_t i = 0; i < n; ++i) f[i] = g[index(l, i)];
      edt_line(f.data(), out.data(), n, v, z);
      for (std::size_t i = 0; i < n; ++i) g[index(l, i)] = out[i];
    }
  };
  pass(W, D * H, [&](std::size_t l, std::size_t i) { return l * W + i; });
  pass(H, D * W, [&](std::size_t l, std::size_t i) { return ((l / W) * H + i) * W + l % W; });
  pass(D, H * W, [&](std::size_t l, std::size_t i) { return i * H * W + l; });
  return g;
}

BoundaryField boundary_distance(const std::vector<std::uint8_t>& labels, Dims dims) {
  if (labels.size() != dims.count()) throw DimensionError("boundary_distance: label count does not match dims");
  const std::size_t D = dims.d, H = dims.h, W = dims.w;
  std::vector<bool> boundary(labels.size(), false);
  bool any = false;
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = dims.index(z, y, x);
        const auto l = labels[i];
        bool b = (z > 0 && labels[i - H * W] != l) || (z + 1 < D && labels[i + H * W] != l) ||
                 (y > 0 && labels[i - W] != l) || (y + 1 < H && labels[i + W] != l) ||
                 (x > 0 && labels[i - 1] != l) || (x + 1 < W && labels[i + 1] != l);
        boundary[i] = b;
        any = any || b;
      }
  BoundaryField field{dims, {}};
  if (!any) {
    field.distance.assign(labels.size(), std::numeric_limits<double>::infinity());
    return field;
  }
  field.distance = squared_distance_transform(boundary, dims);
  for (auto& d : field.distance) d = std::sqrt(d);
  return field;
}

BoundaryField boundary_distance(const LabelVolume& labels) { return boundary_distance(labels.labels, labels.dims); }

std::vector<double> confidence_weights(const BoundaryField& field, double delta) {
  if (!(delta > 0.0)) throw ConfigError("confidence_weights: delta must be positive");
  std::vector<double> w(field.distance.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::min(1.0, field.distance[i] / delta);
  return w;
}

Tensor SoftTargets::tensor() const { return Tensor::from({classes, voxels}, values); }

SoftTargets soften_targets(const std::vector<std::uint8_t>& labels, const BoundaryField& field, std::size_t classes,
                           double delta) {
  if (!(delta > 0.0)) throw ConfigError("soften_targets: delta must be positive");
  if (labels.size() != field.distance.size()) throw DimensionError("soften_targets: labels and field differ in size");
  SoftTargets t;
  t.classes = classes;
  t.voxels = labels.size();
  t.values.assign(classes * t.voxels, 0.0);
  t.eta.assign(t.voxels, 0.0);
  const double uniform = 1.0 / static_cast<double>(classes);
  for (std::size_t v = 0; v < t.voxels; ++v) {
    if (labels[v] >= classes) throw DimensionError("soften_targets: label " + std::to_string(labels[v]) + " >= K");
    const double d = field.distance[v];
    if (d >= delta) {
      t.values[labels[v] * t.voxels + v] = 1.0;
      continue;
    }
    const double eta = 1.0 - d / delta;
    t.eta[v] = eta;
    for (std::size_t c = 0; c < classes; ++c) t.values[c * t.voxels + v] = eta * uniform;
    t.values[labels[v] * t.voxels + v] += 1.0 - eta;
  }
  return t;
}

std::vector<double> class_weights(const SoftTargets& t) {
  std::vector<double> vc(t.classes, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < t.classes; ++c) {
    for (std::size_t v = 0; v < t.voxels; ++v) vc[c] += t.at(c, v);
    total += vc[c];
  }
  std::vector<double> w(t.classes);
  for (std::size_t c = 0; c < t.classes; ++c)
    w[c] = total / (static_cast<double>(t.classes) * std::max(vc[c], 1.0));
  return w;
}

Tensor dice_terms(const Tensor& probs, const SoftTargets& t, double eps) {
  check_probs(probs, t, "dice");
  Sums s = class_sums(probs, t);
  std::vector<double> offset(t.classes);
  for (std::size_t c = 0; c < t.classes; ++c) offset[c] = s.target[c] + eps;
  Tensor ratio = div(add_scalar(scale(s.inter, 2.0), eps), add(s.pred, Tensor::from({t.classes}, offset)));
  return add_scalar(scale(ratio, -1.0), 1.0);
}

Tensor tversky_terms(const Tensor& probs, const SoftTargets& t, double alpha, double beta, double eps) {
  check_probs(probs, t, "tversky");
  Sums s = class_sums(probs, t);
  // TP + a FN + b FP = (1 - a - b) TP + a sum y + b sum p
  std::vector<double> offset(t.classes);
  for (std::size_t c = 0; c < t.classes; ++c) offset[c] = alpha * s.target[c] + eps;
  Tensor den = add(add(scale(s.inter, 1.0 - alpha - beta), scale(s.pred, beta)), Tensor::from({t.classes}, offset));
  Tensor ratio = div(add_scalar(s.inter, eps), den);
  return add_scalar(scale(ratio, -1.0), 1.0);
}

Tensor dice_loss(const Tensor& probs, const SoftTargets& t, const std::vector<double>& weights, double eps) {
  if (weights.size() != t.classes) throw DimensionError("dice: need one weight per class");
  Tensor terms = mul(dice_terms(probs, t, eps), Tensor::from({t.classes}, weights));
  return scale(sum_all(terms), 1.0 / static_cast<double>(t.classes));
}

Tensor tversky_loss(const Tensor& probs, const SoftTargets& t, double alpha, double beta, double eps) {
  return scale(sum_all(tversky_terms(probs, t, alpha, beta, eps)), 1.0 / static_cast<double>(t.classes));
}

Tensor focal_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels, const std::vector<double>& weights,
                  double gamma) {
  if (logits.ndim() != 2 || logits.dim(1) != labels.size() || weights.size() != labels.size())
    throw DimensionError("focal: logits must be [K, N] with N labels and weights");
  if (gamma < 1.0) throw ConfigError("focal: gamma must be >= 1");
  const std::size_t K = logits.dim(0), N = labels.size();
  std::vector<double> onehot(K * N, 0.0);
  for (std::size_t v = 0; v < N; ++v) {
    if (labels[v] >= K) throw DimensionError("focal: label out of range");
    onehot[labels[v] * N + v] = 1.0;
  }
  Tensor log_pt = sum_axis(mul(log_softmax(logits, 0), Tensor::from({K, N}, std::move(onehot))), 0);
  return focal_core(log_pt, weights, gamma);
}

LossBundle total_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels, const LossConfig& cfg) {
  if (logits.ndim() != 5) throw DimensionError("loss: logits must be [B, K, D, H, W]");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const Dims dims{logits.dim(2), logits.dim(3), logits.dim(4)};
  const std::size_t N = dims.count();
  if (labels.size() != B * N)
    throw DimensionError("loss: expected " + std::to_string(B * N) + " labels, got " + std::to_string(labels.size()));

  LossBundle out;
  std::vector<Tensor> totals;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<std::uint8_t> lab(labels.begin() + static_cast<std::ptrdiff_t>(b * N),
                                  labels.begin() + static_cast<std::ptrdiff_t>((b + 1) * N));
    BoundaryField field = boundary_distance(lab, dims);
    SoftTargets targets = soften_targets(lab, field, K, cfg.delta);
    std::vector<double> cw = class_weights(targets);
    std::vector<double> conf = confidence_weights(field, cfg.delta);

    Tensor z = reshape(B == 1 ? logits : slice(logits, 0, b, b + 1), {K, N});
    Tensor p = softmax(z, 0);
    Tensor dice = dice_loss(p, targets, cw, cfg.eps);
    Tensor tversky = tversky_loss(p, targets, cfg.tversky_alpha, cfg.tversky_beta, cfg.eps);
    Tensor focal = focal_loss(z, lab, conf, cfg.focal_gamma);
    totals.push_back(
        add(add(scale(dice, cfg.lambda_dice), scale(tversky, cfg.lambda_tversky)), scale(focal, cfg.lambda_focal)));
    out.dice += dice.item() / static_cast<double>(B);
    out.tversky += tversky.item() / static_cast<double>(B);
    out.focal += focal.item() / static_cast<double>(B);
    out.class_weights = cw;
  }
  Tensor sum = totals[0];
  for (std::size_t b = 1; b < B; ++b) sum = add(sum, totals[b]);
  out.total = B == 1 ? sum : scale(sum, 1.0 / static_cast<double>(B));
  return out;
}

}  // namespace samamba
