#include "samamba/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "samamba/parallel.hpp"
#include "samamba/tensor.hpp"

namespace samamba {

void ReferenceStats::validate() const {
  if (!(q_high > q_low)) throw ConfigError("reference stats: q_high must exceed q_low");
  if (!(std > 0.0)) throw ConfigError("reference stats: std must be positive");
  if (!(p_high > p_low)) throw ConfigError("reference stats: p_high must exceed p_low");
}

void save_stats(const std::filesystem::path& path, const ReferenceStats& s) {
  nlohmann::ordered_json j;
  j["q_low"] = s.q_low;
  j["q_high"] = s.q_high;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["p_low"] = s.p_low;
  j["p_high"] = s.p_high;
  j["provenance"] = s.provenance;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

ReferenceStats load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    ReferenceStats s;
    s.q_low = j.at("q_low");
    s.q_high = j.at("q_high");
    s.mean = j.at("mean");
    s.std = j.at("std");
    s.p_low = j.value("p_low", 1.0);
    s.p_high = j.value("p_high", 99.0);
    s.provenance = j.value("provenance", "");
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad stats file " + path.string() + ": " + e.what());
  }
}

// ---- NLM -------------------------------------------------------------------

Volume nlm_denoise(const Volume& v, const NlmParams& p) {
  if (p.patch_radius < 1 || p.search_radius < 1) throw ConfigError("nlm: radii must be >= 1");
  if (!(p.h > 0.0)) throw ConfigError("nlm: h must be positive");
  v.validate();

  const std::size_t n = v.data.size();
  double mean = std::accumulate(v.data.begin(), v.data.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double x : v.data) var += (x - mean) * (x - mean);
  double spread = std::sqrt(var / static_cast<double>(n));
  if (spread == 0.0) return v;
  const double h = p.h * spread;

  const long D = static_cast<long>(v.dims.d), H = static_cast<long>(v.dims.h), W = static_cast<long>(v.dims.w);
  const long pr = static_cast<long>(p.patch_radius), sr = static_cast<long>(p.search_radius);
  const long pad = pr + sr;
  const long PD = D + 2 * pad, PH = H + 2 * pad, PW = W + 2 * pad;
  auto cl = [](long i, long hi) { return std::clamp(i, 0L, hi - 1); };

  std::vector<double> padded(static_cast<std::size_t>(PD * PH * PW));
  for (long z = 0; z < PD; ++z)
    for (long y = 0; y < PH; ++y)
      for (long x = 0; x < PW; ++x)
        padded[(z * PH + y) * PW + x] = v.at(cl(z - pad, D), cl(y - pad, H), cl(x - pad, W));

  // Squared differences live on the volume grown by the patch radius.
  const long RD = D + 2 * pr, RH = H + 2 * pr, RW = W + 2 * pr;
  const double patch_count = static_cast<double>((2 * pr + 1) * (2 * pr + 1) * (2 * pr + 1));
  const double inv_h2 = 1.0 / (h * h * patch_count);

  std::vector<double> num(n, 0.0), den(n, 0.0);
  std::vector<double> sq(static_cast<std::size_t>(RD * RH * RW));
  std::vector<double> bx(static_cast<std::size_t>(RD * RH * W));
  std::vector<double> by(static_cast<std::size_t>(RD * H * W));

  for (long oz = -sr; oz <= sr; ++oz) {
    for (long oy = -sr; oy <= sr; ++oy) {
      for (long ox = -sr; ox <= sr; ++ox) {
        const long off = (oz * PH + oy) * PW + ox;
        parallel_for(static_cast<std::size_t>(RD), [&](std::size_t b, std::size_t e) {
          for (long z = static_cast<long>(b); z < static_cast<long>(e); ++z)
            for (long y = 0; y < RH; ++y) {
              const double* row = &padded[((z + sr) * PH + (y + sr)) * PW + sr];
              double* dst = &sq[(z * RH + y) * RW];
              for (long x = 0; x < RW; ++x) {
                double d = row[x] - row[x + off];
                dst[x] = d * d;
              }
            }
        });
        parallel_for(static_cast<std::size_t>(RD), [&](std::size_t b, std::size_t e) {
          for (long z = static_cast<long>(b); z < static_cast<long>(e); ++z)
            for (long y = 0; y < RH; ++y) {
              const double* src = &sq[(z * RH + y) * RW];
              double* dst = &bx[(z * RH + y) * W];
              for (long x = 0; x < W; ++x) {
                double s = 0.0;
                for (long k = 0; k <= 2 * pr; ++k) s += src[x + k];
                dst[x] = s;
              }
            }
        });
        parallel_for(static_cast<std::size_t>(RD), [&](std::size_t b, std::size_t e) {
          for (long z = static_cast<long>(b); z < static_cast<long>(e); ++z)
            for (long y = 0; y < H; ++y) {
              double* dst = &by[(z * H + y) * W];
              for (long x = 0; x < W; ++x) {
                double s = 0.0;
                for (long k = 0; k <= 2 * pr; ++k) s += bx[(z * RH + y + k) * W + x];
                dst[x] = s;
              }
            }
        });
        parallel_for(static_cast<std::size_t>(D), [&](std::size_t b, std::size_t e) {
          for (long z = static_cast<long>(b); z < static_cast<long>(e); ++z) {
            if (z + oz < 0 || z + oz >= D) continue;
            for (long y = 0; y < H; ++y) {
              if (y + oy < 0 || y + oy >= H) continue;
              for (long x = 0; x < W; ++x) {
                if (x + ox < 0 || x + ox >= W) continue;
                double s = 0.0;
                for (long k = 0; k <= 2 * pr; ++k) s += by[((z + k) * H + y) * W + x];
                double w = std::exp(-s * inv_h2);
                std::size_t i = static_cast<std::size_t>((z * H + y) * W + x);
                num[i] += w * v.data[static_cast<std::size_t>(((z + oz) * H + (y + oy)) * W + (x + ox))];
                den[i] += w;
              }
            }
          }
        });
      }
    }
  }

  Volume out(v.dims, v.spacing);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = num[i] / den[i];
  return out;
}

// ---- intensity -------------------------------------------------------------

namespace {

constexpr std::size_t kMaxSample = std::size_t{1} << 24;

std::vector<double> sorted_sample(const std::vector<double>& values) {
  std::vector<double> s;
  if (values.size() > kMaxSample) {
    std::mt19937_64 rng(0x5eed);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    s.resize(kMaxSample);
    for (auto& x : s) x = values[pick(rng)];
  } else {
    s = values;
  }
  std::sort(s.begin(), s.end());
  return s;
}

double interp(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw ContractError("percentile of an empty sample");
  if (p < 0.0 || p > 100.0) throw ConfigError("percentile outside [0, 100]");
  double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double t = pos - static_cast<double>(lo);
  return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

}  // namespace

double percentile(const std::vector<double>& values, double p) { return interp(sorted_sample(values), p); }

std::pair<double, double> percentiles(const std::vector<double>& values, double p_low, double p_high) {
  auto s = sorted_sample(values);
  return {interp(s, p_low), interp(s, p_high)};
}

Volume percentile_align(const Volume& src, const ReferenceStats& ref) {
  auto [lo, hi] = percentiles(src.data, ref.p_low, ref.p_high);
  if (!(hi > lo)) {
    throw DegenerateContrastError("percentile_align: source percentiles coincide (" + std::to_string(lo) +
                                  "); volume has no contrast");
  }
  double a = (ref.q_high - ref.q_low) / (hi - lo);
  Volume out(src.dims, src.spacing);
  for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = ref.q_low + (src.data[i] - lo) * a;
  return out;
}

Volume standardize(const Volume& v, const ReferenceStats& stats) {
  if (!(stats.std > 0.0)) throw ConfigError("standardize: std must be positive");
  constexpr double eps = 1e-8;
  Volume out(v.dims, v.spacing);
  for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = (v.data[i] - stats.mean) / (stats.std + eps);
  return out;
}

ReferenceStats fit_reference(const std::vector<Volume>& training, std::string provenance, double p_low,
                             double p_high) {
  if (training.empty()) throw ConfigError("fit_reference: no training volumes");
  std::vector<double> pooled;
  for (const auto& v : training) pooled.insert(pooled.end(), v.data.begin(), v.data.end());

  ReferenceStats s;
  s.p_low = p_low;
  s.p_high = p_high;
  s.provenance = std::move(provenance);
  std::tie(s.q_low, s.q_high) = percentiles(pooled, p_low, p_high);
  if (!(s.q_high > s.q_low)) throw DegenerateContrastError("fit_reference: training split has no contrast");

  double sum = 0.0;
  std::size_t count = 0;
  std::vector<Volume> aligned;
  aligned.reserve(training.size());
  for (const auto& v : training) {
    aligned.push_back(percentile_align(v, s));
    for (double x : aligned.back().data) sum += x;
    count += v.data.size();
  }
  s.mean = sum / static_cast<double>(count);
  double var = 0.0;
  for (const auto& v : aligned)
    for (double x : v.data) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(count));
  s.validate();
  return s;
}

Volume harmonize(const Volume& v, const ReferenceStats& stats) { return standardize(percentile_align(v, stats), stats); }

// ---- augmentation ----------------------------------------------------------

AugmentDraw draw_augment(std::mt19937_64& rng, const AugmentSettings& s) {
  AugmentDraw d;
  std::bernoulli_distribution flip(s.flip_p);
  for (auto& f : d.flip) f = flip(rng);
  d.rot90 = std::uniform_int_distribution<int>(0, 3)(rng);
  d.brightness = std::uniform_real_distribution<double>(s.brightness_lo, s.brightness_hi)(rng);
  d.noise = std::bernoulli_distribution(s.noise_p)(rng);
  d.noise_seed = rng();
  return d;
}

namespace {

// Source index for output voxel (z, y, x) under flip-then-rotate.
template <class Fn>
void remap(const Dims& in, const AugmentDraw& d, Dims& out_dims, Fn&& emit) {
  int k = ((d.rot90 % 4) + 4) % 4;
  out_dims = in;
  if (k % 2 == 1) std::swap(out_dims.h, out_dims.w);
  for (std::size_t z = 0; z < out_dims.d; ++z)
    for (std::size_t y = 0; y < out_dims.h; ++y)
      for (std::size_t x = 0; x < out_dims.w; ++x) {
        // Undo the rotation (counter-clockwise quarter turns in the y-x plane).
        std::size_t sy = y, sx = x;
        switch (k) {
          case 1:
            sy = x;
            sx = out_dims.h - 1 - y;
            break;
          case 2:
            sy = out_dims.h - 1 - y;
            sx = out_dims.w - 1 - x;
            break;
          case 3:
            sy = out_dims.w - 1 - x;
            sx = y;
            break;
          default:
            break;
        }
        std::size_t sz = z;
        if (d.flip[0]) sz = in.d - 1 - sz;
        if (d.flip[1]) sy = in.h - 1 - sy;
        if (d.flip[2]) sx = in.w - 1 - sx;
        emit(out_dims.index(z, y, x), in.index(sz, sy, sx));
      }
}

}  // namespace

std::pair<Volume, LabelVolume> apply_augment(const Volume& patch, const LabelVolume& mask, const AugmentDraw& draw,
                                             const AugmentSettings& s) {
  if (!(patch.dims == mask.dims)) throw DimensionError("augment: patch and mask dims differ");
  Volume img;
  LabelVolume lab;
  Dims out;
  remap(patch.dims, draw, out, [](std::size_t, std::size_t) {});
  img = Volume(out, patch.spacing);
  lab = LabelVolume(out, mask.spacing);
  lab.class_names = mask.class_names;
  remap(patch.dims, draw, out, [&](std::size_t o, std::size_t i) {
    img.data[o] = patch.data[i];
    lab.labels[o] = mask.labels[i];
  });
  if (draw.brightness != 1.0)
    for (auto& x : img.data) x *= draw.brightness;
  if (draw.noise) {
    std::mt19937_64 rng(draw.noise_seed);
    std::normal_distribution<double> n(0.0, s.noise_sigma);
    for (auto& x : img.data) x += n(rng);
  }
  return {std::move(img), std::move(lab)};
}

std::pair<Volume, LabelVolume> augment(const Volume& patch, const LabelVolume& mask, std::mt19937_64& rng,
                                       const AugmentSettings& s) {
  return apply_augment(patch, mask, draw_augment(rng, s), s);
}

// ---- patches ---------------------------------------------------------------

std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0) throw ConfigError("patch and stride must be positive");
  if (stride > patch) throw ConfigError("stride larger than patch would leave gaps");
  if (extent < patch) {
    throw SizeError("extent " + std::to_string(extent) + " is smaller than patch " + std::to_string(patch));
  }
  std::vector<std::size_t> o;
  for (std::size_t s = 0; s + patch <= extent; s += stride) o.push_back(s);
  if (o.back() + patch != extent) o.push_back(extent - patch);
  return o;
}

Volume crop(const Volume& v, std::array<std::size_t, 3> origin, Dims size) {
  Volume out(size, v.spacing);
  for (std::size_t z = 0; z < size.d; ++z)
    for (std::size_t y = 0; y < size.h; ++y)
      std::copy_n(&v.data[v.dims.index(origin[0] + z, origin[1] + y, origin[2])], size.w,
                  &out.data[size.index(z, y, 0)]);
  return out;
}

LabelVolume crop(const LabelVolume& v, std::array<std::size_t, 3> origin, Dims size) {
  LabelVolume out(size, v.spacing);
  out.class_names = v.class_names;
  for (std::size_t z = 0; z < size.d; ++z)
    for (std::size_t y = 0; y < size.h; ++y)
      std::copy_n(&v.labels[v.dims.index(origin[0] + z, origin[1] + y, origin[2])], size.w,
                  &out.labels[size.index(z, y, 0)]);
  return out;
}

std::vector<Patch> extract_patches(const Volume& v, const LabelVolume& mask, const PatchGrid& grid) {
  if (!(v.dims == mask.dims)) throw DimensionError("extract_patches: volume and mask dims differ");
  auto oz = axis_origins(v.dims.d, grid.patch, grid.stride);
  auto oy = axis_origins(v.dims.h, grid.patch, grid.stride);
  auto ox = axis_origins(v.dims.w, grid.patch, grid.stride);
  Dims size{grid.patch, grid.patch, grid.patch};
  std::vector<Patch> out;
  for (auto z : oz)
    for (auto y : oy)
      for (auto x : ox) {
        std::array<std::size_t, 3> o{z, y, x};
        LabelVolume m = crop(mask, o, size);
        std::size_t fg = std::count_if(m.labels.begin(), m.labels.end(), [](std::uint8_t l) { return l != 0; });
        if (static_cast<double>(fg) < grid.min_foreground * static_cast<double>(size.count())) continue;
        out.push_back({o, crop(v, o, size), std::move(m)});
      }
  return out;
}

}  // namespace samamba
