#include <algorithm>
#include <cmath>
#include <limits>

#include "samamba/ops.hpp"

namespace samamba {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

struct Vol5 {
  std::size_t outer, d, h, w;  // outer = B*C
};

Vol5 vol5(const Tensor& x, const char* op) {
  if (x.ndim() != 5) throw DimensionError(std::string(op) + ": expects [B, C, D, H, W], got " + shape_str(x.shape()));
  return {x.dim(0) * x.dim(1), x.dim(2), x.dim(3), x.dim(4)};
}

}  // namespace

Tensor avg_pool3d(const Tensor& x, std::size_t k) {
  Vol5 v = vol5(x, "avg_pool3d");
  if (k == 0 || v.d % k || v.h % k || v.w % k) throw DimensionError("avg_pool3d: extents must be multiples of the kernel");
  std::size_t od = v.d / k, oh = v.h / k, ow = v.w / k;
  double inv = 1.0 / static_cast<double>(k * k * k);
  auto xd = x.data();
  std::vector<double> out(v.outer * od * oh * ow, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t z = 0; z < v.d; ++z)
      for (std::size_t y = 0; y < v.h; ++y)
        for (std::size_t xx = 0; xx < v.w; ++xx)
          out[((o * od + z / k) * oh + y / k) * ow + xx / k] += xd[((o * v.d + z) * v.h + y) * v.w + xx] * inv;
  return make_result({x.dim(0), x.dim(1), od, oh, ow}, std::move(out), "avg_pool3d", {x}, [v, k, od, oh, ow, inv](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t z = 0; z < v.d; ++z)
          for (std::size_t y = 0; y < v.h; ++y)
            for (std::size_t xx = 0; xx < v.w; ++xx)
              g[((o * v.d + z) * v.h + y) * v.w + xx] += self.grad[((o * od + z / k) * oh + y / k) * ow + xx / k] * inv;
    }
  });
}

Tensor max_pool3d(const Tensor& x, std::size_t k) {
  Vol5 v = vol5(x, "max_pool3d");
  if (k == 0 || v.d % k || v.h % k || v.w % k) throw DimensionError("max_pool3d: extents must be multiples of the kernel");
  std::size_t od = v.d / k, oh = v.h / k, ow = v.w / k;
  auto xd = x.data();
  std::size_t n_out = v.outer * od * oh * ow;
  std::vector<double> out(n_out, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(n_out, 0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t z = 0; z < v.d; ++z)
      for (std::size_t y = 0; y < v.h; ++y)
        for (std::size_t xx = 0; xx < v.w; ++xx) {
          std::size_t src = ((o * v.d + z) * v.h + y) * v.w + xx;
          std::size_t dst = ((o * od + z / k) * oh + y / k) * ow + xx / k;
          // First maximum wins on ties.
          if (xd[src] > out[dst]) {
            out[dst] = xd[src];
            arg[dst] = src;
          }
        }
  return make_result({x.dim(0), x.dim(1), od, oh, ow}, std::move(out), "max_pool3d", {x}, [arg = std::move(arg)](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() < 3) throw DimensionError("global_avg_pool: expects [B, C, ...]");
  std::size_t b = x.dim(0), c = x.dim(1), sp = x.size() / (b * c);
  double inv = 1.0 / static_cast<double>(sp);
  auto xd = x.data();
  std::vector<double> out(b * c, 0.0);
  // Summing in sorted order makes the result exactly invariant to spatial permutations.
  std::vector<double> buf(sp);
  for (std::size_t nc = 0; nc < b * c; ++nc) {
    std::copy(xd.begin() + static_cast<std::ptrdiff_t>(nc * sp), xd.begin() + static_cast<std::ptrdiff_t>((nc + 1) * sp),
              buf.begin());
    std::sort(buf.begin(), buf.end());
    double acc = 0.0;
    for (double v : buf) acc += v;
    out[nc] = acc * inv;
  }
  return make_result({b, c}, std::move(out), "global_avg_pool", {x}, [sp, inv](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t nc = 0; nc < self.grad.size(); ++nc)
        for (std::size_t i = 0; i < sp; ++i) g[nc * sp + i] += self.grad[nc] * inv;
    }
  });
}

Tensor upsample_nearest(const Tensor& x, std::size_t f) {
  Vol5 v = vol5(x, "upsample_nearest");
  if (f == 0) throw DimensionError("upsample_nearest: factor must be >= 1");
  std::size_t od = v.d * f, oh = v.h * f, ow = v.w * f;
  auto xd = x.data();
  std::vector<double> out(v.outer * od * oh * ow);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          out[((o * od + z) * oh + y) * ow + xx] = xd[((o * v.d + z / f) * v.h + y / f) * v.w + xx / f];
  return make_result({x.dim(0), x.dim(1), od, oh, ow}, std::move(out), "upsample_nearest", {x}, [v, f, od, oh, ow](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t z = 0; z < od; ++z)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
              g[((o * v.d + z / f) * v.h + y / f) * v.w + xx / f] += self.grad[((o * od + z) * oh + y) * ow + xx];
    }
  });
}

namespace {

struct Interp {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Interp interp_axis(std::size_t in, std::size_t out) {
  Interp r;
  r.lo.resize(out);
  r.hi.resize(out);
  r.frac.resize(out);
  double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = std::clamp((static_cast<double>(o) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    r.lo[o] = i0;
    r.hi[o] = std::min(i0 + 1, in - 1);
    r.frac[o] = src - static_cast<double>(i0);
  }
  return r;
}

}  // namespace

Tensor upsample_trilinear(const Tensor& x, std::array<std::size_t, 3> out_dims) {
  Vol5 v = vol5(x, "upsample_trilinear");
  auto [od, oh, ow] = out_dims;
  if (od == 0 || oh == 0 || ow == 0) throw DimensionError("upsample_trilinear: empty output");
  Interp iz = interp_axis(v.d, od), iy = interp_axis(v.h, oh), ix = interp_axis(v.w, ow);
  auto xd = x.data();
  std::vector<double> out(v.outer * od * oh * ow);
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = xd.data() + o * v.d * v.h * v.w;
    for (std::size_t z = 0; z < od; ++z) {
      double fz = iz.frac[z];
      for (std::size_t y = 0; y < oh; ++y) {
        double fy = iy.frac[y];
        const double* r00 = src + (iz.lo[z] * v.h + iy.lo[y]) * v.w;
        const double* r01 = src + (iz.lo[z] * v.h + iy.hi[y]) * v.w;
        const double* r10 = src + (iz.hi[z] * v.h + iy.lo[y]) * v.w;
        const double* r11 = src + (iz.hi[z] * v.h + iy.hi[y]) * v.w;
        double* dst = out.data() + ((o * od + z) * oh + y) * ow;
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double fx = ix.frac[xx];
          std::size_t a = ix.lo[xx], b = ix.hi[xx];
          double c00 = r00[a] * (1 - fx) + r00[b] * fx;
          double c01 = r01[a] * (1 - fx) + r01[b] * fx;
          double c10 = r10[a] * (1 - fx) + r10[b] * fx;
          double c11 = r11[a] * (1 - fx) + r11[b] * fx;
          double c0 = c00 * (1 - fy) + c01 * fy;
          double c1 = c10 * (1 - fy) + c11 * fy;
          dst[xx] = c0 * (1 - fz) + c1 * fz;
        }
      }
    }
  }
  return make_result({x.dim(0), x.dim(1), od, oh, ow}, std::move(out), "upsample_trilinear", {x},
                     [v, od, oh, ow, iz, iy, ix](Node& self) {
                       double* g = input_grad(self, 0);
                       if (!g) return;
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         double* dst = g + o * v.d * v.h * v.w;
                         for (std::size_t z = 0; z < od; ++z) {
                           double fz = iz.frac[z];
                           for (std::size_t y = 0; y < oh; ++y) {
                             double fy = iy.frac[y];
                             double* r00 = dst + (iz.lo[z] * v.h + iy.lo[y]) * v.w;
                             double* r01 = dst + (iz.lo[z] * v.h + iy.hi[y]) * v.w;
                             double* r10 = dst + (iz.hi[z] * v.h + iy.lo[y]) * v.w;
                             double* r11 = dst + (iz.hi[z] * v.h + iy.hi[y]) * v.w;
                             const double* up = self.grad.data() + ((o * od + z) * oh + y) * ow;
                             for (std::size_t xx = 0; xx < ow; ++xx) {
                               double fx = ix.frac[xx];
                               std::size_t a = ix.lo[xx], b = ix.hi[xx];
                               double u = up[xx];
                               double u0 = u * (1 - fz), u1 = u * fz;
                               double u00 = u0 * (1 - fy), u01 = u0 * fy, u10 = u1 * (1 - fy), u11 = u1 * fy;
                               r00[a] += u00 * (1 - fx);
                               r00[b] += u00 * fx;
                               r01[a] += u01 * (1 - fx);
                               r01[b] += u01 * fx;
                               r10[a] += u10 * (1 - fx);
                               r10[b] += u10 * fx;
                               r11[a] += u11 * (1 - fx);
                               r11[b] += u11 * fx;
                             }
                           }
                         }
                       }
                     });
}

namespace {

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw DimensionError(std::string(op) + ": axis out of range");
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  AxisSplit a = split_axis(x.shape(), axis, "softmax");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < a.outer; ++o)
    for (std::size_t i = 0; i < a.inner; ++i) {
      std::size_t base = o * a.n * a.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < a.n; ++k) mx = std::max(mx, xd[base + k * a.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < a.n; ++k) {
        double e = std::exp(xd[base + k * a.inner] - mx);
        out[base + k * a.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < a.n; ++k) out[base + k * a.inner] /= s;
    }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [a](Node& self) {
    double* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < a.outer; ++o)
      for (std::size_t i = 0; i < a.inner; ++i) {
        std::size_t base = o * a.n * a.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < a.n; ++k) dot += self.grad[base + k * a.inner] * self.data[base + k * a.inner];
        for (std::size_t k = 0; k < a.n; ++k) {
          std::size_t j = base + k * a.inner;
          g[j] += self.data[j] * (self.grad[j] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  AxisSplit a = split_axis(x.shape(), axis, "log_softmax");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < a.outer; ++o)
    for (std::size_t i = 0; i < a.inner; ++i) {
      std::size_t base = o * a.n * a.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < a.n; ++k) mx = std::max(mx, xd[base + k * a.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < a.n; ++k) s += std::exp(xd[base + k * a.inner] - mx);
      double lse = mx + std::log(s);
      for (std::size_t k = 0; k < a.n; ++k) out[base + k * a.inner] = xd[base + k * a.inner] - lse;
    }
  return make_result(x.shape(), std::move(out), "log_softmax", {x}, [a](Node& self) {
    double* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < a.outer; ++o)
      for (std::size_t i = 0; i < a.inner; ++i) {
        std::size_t base = o * a.n * a.inner + i;
        double total = 0.0;
        for (std::size_t k = 0; k < a.n; ++k) total += self.grad[base + k * a.inner];
        for (std::size_t k = 0; k < a.n; ++k) {
          std::size_t j = base + k * a.inner;
          g[j] += self.grad[j] - std::exp(self.data[j]) * total;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() == 0) throw DimensionError("layer_norm: scalar input");
  std::size_t c = x.shape().back();
  if (gain.size() != c || bias.size() != c) throw DimensionError("layer_norm: gain/bias extent mismatch");
  std::size_t rows = x.size() / c;
  auto xd = x.data(), gd = gain.data(), bd = bias.data();
  std::vector<double> out(xd.size()), xhat(xd.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      double n = (row[j] - mean) * rstd[r];
      xhat[r * c + j] = n;
      out[r * c + j] = n * gd[j] + bd[j];
    }
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x, gain, bias},
                     [rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       const auto& gv = input_data(self, 1);
                       double* gx = input_grad(self, 0);
                       double* gg = input_grad(self, 1);
                       double* gb = input_grad(self, 2);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* up = self.grad.data() + r * c;
                         const double* xh = xhat.data() + r * c;
                         if (gg)
                           for (std::size_t j = 0; j < c; ++j) gg[j] += up[j] * xh[j];
                         if (gb)
                           for (std::size_t j = 0; j < c; ++j) gb[j] += up[j];
                         if (gx) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < c; ++j) {
                             double d = up[j] * gv[j];
                             m1 += d;
                             m2 += d * xh[j];
                           }
                           m1 /= static_cast<double>(c);
                           m2 /= static_cast<double>(c);
                           for (std::size_t j = 0; j < c; ++j)
                             gx[r * c + j] += rstd[r] * (up[j] * gv[j] - m1 - xh[j] * m2);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  double s = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = keep(rng) ? s : 0.0;
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return make_result(x.shape(), std::move(out), "dropout", {x}, [mask = std::move(mask)](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
    }
  });
}

}  // namespace samamba
