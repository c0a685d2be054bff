#include "samamba/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "samamba/loss.hpp"
#include "samamba/tensor.hpp"

namespace samamba {

namespace {

struct Sphere {
  double z, y, x, r;
};

bool separated(const std::vector<Sphere>& s, const Sphere& c, double gap) {
  for (const auto& o : s) {
    double dz = o.z - c.z, dy = o.y - c.y, dx = o.x - c.x, rr = o.r + c.r + gap;
    if (dz * dz + dy * dy + dx * dx < rr * rr) return false;
  }
  return true;
}

// Calls f(index) for every voxel whose centre lies inside the sphere.
template <class F>
void for_voxels(const Sphere& s, Dims d, F&& f) {
  auto lo = [&](double c) { return static_cast<std::ptrdiff_t>(std::floor(c - s.r - 0.5)); };
  auto hi = [&](double c) { return static_cast<std::ptrdiff_t>(std::ceil(c + s.r - 0.5)); };
  const auto D = static_cast<std::ptrdiff_t>(d.d), H = static_cast<std::ptrdiff_t>(d.h),
             W = static_cast<std::ptrdiff_t>(d.w);
  for (auto z = std::max<std::ptrdiff_t>(0, lo(s.z)); z <= std::min(D - 1, hi(s.z)); ++z)
    for (auto y = std::max<std::ptrdiff_t>(0, lo(s.y)); y <= std::min(H - 1, hi(s.y)); ++y)
      for (auto x = std::max<std::ptrdiff_t>(0, lo(s.x)); x <= std::min(W - 1, hi(s.x)); ++x) {
        double dz = z + 0.5 - s.z, dy = y + 0.5 - s.y, dx = x + 0.5 - s.x;
        if (dz * dz + dy * dy + dx * dx <= s.r * s.r)
          f(d.index(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)));
      }
}

constexpr std::uint8_t kRock = 0, kBrine = 1, kOil = 2;

std::size_t place_grains(const PhantomSpec& spec, std::vector<std::uint8_t>& labels, std::mt19937_64& rng) {
  const Dims d = spec.dims;
  const double n = static_cast<double>(d.count());
  std::size_t solid = 0;
  auto porosity = [&](std::size_t s) { return 1.0 - static_cast<double>(s) / n; };
  const double target = spec.porosity;

  std::vector<Sphere> grains;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double shrink = 1.0;  // scales the radius range down as placements keep failing
  std::size_t fails = 0;
  const double mid = 0.5 * (spec.grain_radius_min + spec.grain_radius_max);
  for (std::size_t attempt = 0; porosity(solid) > target + 0.01; ++attempt) {
    if (attempt >= spec.max_attempts)
      throw GenerationError("phantom: porosity " + std::to_string(target) + " not reached (stuck at " +
                            std::to_string(porosity(solid)) + " after " + std::to_string(attempt) + " attempts)");
    Sphere s{u01(rng) * d.d, u01(rng) * d.h, u01(rng) * d.w, 0.0};
    double lo = spec.grain_radius_min, hi = spec.grain_radius_max;
    if (spec.kind == PhantomKind::LayeredBed) {
      std::size_t layer = static_cast<std::size_t>(s.z / (static_cast<double>(d.d) / 4.0));
      (layer % 2 == 0 ? hi : lo) = mid;
    }
    lo = std::max(1.0, lo * shrink);
    hi = std::max(lo, hi * shrink);
    s.r = lo + (hi - lo) * u01(rng);

    bool ok = separated(grains, s, 0.0);
    std::size_t added = 0;
    if (ok) {
      for_voxels(s, d, [&](std::size_t) { ++added; });
      ok = added > 0 && porosity(solid + added) >= target - 0.01;
    }
    if (!ok) {
      if (++fails >= 2000) {
        shrink *= 0.9;
        fails = 0;
      }
      continue;
    }
    fails = 0;
    for_voxels(s, d, [&](std::size_t i) { labels[i] = kRock; });
    solid += added;
    grains.push_back(s);
  }
  return grains.size();
}

void split_by_distance(const PhantomSpec& spec, std::vector<std::uint8_t>& labels) {
  std::vector<bool> rock(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) rock[i] = labels[i] == kRock;
  auto dist = squared_distance_transform(rock, spec.dims);
  std::vector<std::size_t> pore;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!rock[i]) pore.push_back(i);
  std::stable_sort(pore.begin(), pore.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  const auto n_oil = static_cast<std::size_t>(std::lround(spec.oil_fraction * static_cast<double>(pore.size())));
  for (std::size_t k = 0; k < n_oil; ++k) labels[pore[k]] = kOil;
}

void place_droplets(const PhantomSpec& spec, std::vector<std::uint8_t>& labels, std::mt19937_64& rng) {
  const Dims d = spec.dims;
  std::vector<bool> rock(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) rock[i] = labels[i] == kRock;
  auto dist = squared_distance_transform(rock, d);
  std::size_t pore = 0;
  std::vector<std::size_t> centres;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pore += !rock[i];
    if (dist[i] >= 4.0) centres.push_back(i);
  }
  if (centres.empty()) return;
  const auto target = static_cast<std::size_t>(std::lround(spec.oil_fraction * static_cast<double>(pore)));
  std::uniform_int_distribution<std::size_t> pick(0, centres.size() - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Sphere> drops;
  std::size_t oil = 0;
  for (std::size_t attempt = 0; attempt < spec.max_attempts && oil < target; ++attempt) {
    std::size_t c = centres[pick(rng)];
    std::size_t z = c / (d.h * d.w), y = (c / d.w) % d.h, x = c % d.w;
    Sphere s{z + 0.5, y + 0.5, x + 0.5,
             spec.droplet_radius_min + (spec.droplet_radius_max - spec.droplet_radius_min) * u01(rng)};
    // keep droplets apart and off the grain surfaces so each stays an isolated blob in brine
    if (!separated(drops, s, 1.5)) continue;
    drops.push_back(s);
    for_voxels(s, d, [&](std::size_t i) {
      if (dist[i] >= 2.0 && labels[i] != kOil) {
        labels[i] = kOil;
        ++oil;
      }
    });
  }
}

void drape_film(const PhantomSpec& spec, std::vector<std::uint8_t>& labels) {
  const Dims d = spec.dims;
  std::vector<std::uint8_t> out = labels;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        std::size_t i = d.index(z, y, x);
        if (labels[i] == kRock) continue;
        bool touches = (z > 0 && labels[d.index(z - 1, y, x)] == kRock) ||
                       (z + 1 < d.d && labels[d.index(z + 1, y, x)] == kRock) ||
                       (y > 0 && labels[d.index(z, y - 1, x)] == kRock) ||
                       (y + 1 < d.h && labels[d.index(z, y + 1, x)] == kRock) ||
                       (x > 0 && labels[d.index(z, y, x - 1)] == kRock) ||
                       (x + 1 < d.w && labels[d.index(z, y, x + 1)] == kRock);
        out[i] = touches ? kBrine : kOil;
      }
  labels = std::move(out);
}

}  // namespace

std::string to_string(PhantomKind k) {
  switch (k) {
    case PhantomKind::SpherePack:
      return "sphere-pack";
    case PhantomKind::LayeredBed:
      return "layered-bed";
    case PhantomKind::DropletField:
      return "droplet-field";
    case PhantomKind::WettingFilm:
      return "wetting-film";
  }
  return "?";
}

PhantomKind phantom_kind_from_string(const std::string& s) {
  for (auto k : {PhantomKind::SpherePack, PhantomKind::LayeredBed, PhantomKind::DropletField, PhantomKind::WettingFilm})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown phantom kind '" + s + "'");
}

Volume gaussian_blur(const Volume& v, double sigma) {
  if (!(sigma > 0.0)) return v;
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  for (std::ptrdiff_t i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& x : k) x /= s;

  const Dims d = v.dims;
  const std::array<std::size_t, 3> ext{d.d, d.h, d.w};
  const std::array<std::size_t, 3> step{d.h * d.w, d.w, 1};
  Volume cur = v, next = v;
  for (int axis = 0; axis < 3; ++axis) {
    const auto n = static_cast<std::ptrdiff_t>(ext[axis]);
    for (std::size_t i = 0; i < d.count(); ++i) {
      const auto pos = static_cast<std::ptrdiff_t>((i / step[axis]) % ext[axis]);
      const std::size_t base = i - static_cast<std::size_t>(pos) * step[axis];
      double acc = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) {
        std::ptrdiff_t q = std::clamp<std::ptrdiff_t>(pos + t, 0, n - 1);
        acc += k[t + r] * cur.data[base + static_cast<std::size_t>(q) * step[axis]];
      }
      next.data[i] = acc;
    }
    std::swap(cur, next);
  }
  return cur;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  const Dims d = spec.dims;
  if (d.d < 32 || d.h < 32 || d.w < 32) throw SizeError("phantom: dims must be at least 32 per axis, got " + to_string(d));
  if (!(spec.porosity > 0.0 && spec.porosity < 1.0)) throw ConfigError("phantom: porosity must lie in (0, 1)");
  if (!(spec.oil_fraction >= 0.0 && spec.oil_fraction <= 1.0)) throw ConfigError("phantom: oil fraction must lie in [0, 1]");
  if (!(spec.grain_radius_min > 0.0 && spec.grain_radius_max >= spec.grain_radius_min))
    throw ConfigError("phantom: bad grain radius range");
  if (!(spec.droplet_radius_min > 0.0 && spec.droplet_radius_max >= spec.droplet_radius_min))
    throw ConfigError("phantom: bad droplet radius range");
  if (spec.blur_sigma < 0.0 || spec.noise_sigma < 0.0) throw ConfigError("phantom: blur and noise must be non-negative");

  std::mt19937_64 rng(spec.seed);
  Phantom ph;
  std::vector<std::uint8_t> labels(d.count(), kBrine);
  ph.grains = place_grains(spec, labels, rng);
  switch (spec.kind) {
    case PhantomKind::SpherePack:
    case PhantomKind::LayeredBed:
      split_by_distance(spec, labels);
      break;
    case PhantomKind::DropletField:
      place_droplets(spec, labels, rng);
      break;
    case PhantomKind::WettingFilm:
      drape_film(spec, labels);
      break;
  }

  ph.truth = LabelVolume(d, spec.spacing);
  ph.truth.labels = labels;
  std::size_t pore = 0;
  for (auto l : labels) pore += l != kRock;
  ph.porosity = static_cast<double>(pore) / static_cast<double>(d.count());

  Volume clean(d, spec.spacing);
  for (std::size_t i = 0; i < labels.size(); ++i) clean.data[i] = spec.gray[labels[i]];
  ph.image = gaussian_blur(clean, spec.blur_sigma);
  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 noise_rng(spec.seed ^ 0x6e6f697365ULL);
    std::normal_distribution<double> nd(0.0, spec.noise_sigma);
    for (double& x : ph.image.data) x += nd(noise_rng);
  }
  return ph;
}

}  // namespace samamba
