#include <algorithm>
#include <limits>

#include "gemm.hpp"
#include "samamba/ops.hpp"
#include "samamba/parallel.hpp"

namespace samamba {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

struct ConvGeometry {
  std::size_t batch, cin, d, h, w;
  std::size_t cout, cin_g, kd, kh, kw;
  std::size_t od, oh, ow;
  std::size_t stride, pad, groups;

  std::size_t cout_g() const { return cout / groups; }
  std::size_t in_vol() const { return d * h * w; }
  std::size_t out_vol() const { return od * oh * ow; }

  // Output x-range [lo, hi) whose input column ox*stride + kx - pad lies inside [0, w).
  void ow_range(std::size_t kx, std::size_t& lo, std::size_t& hi) const {
    long p = static_cast<long>(pad), s = static_cast<long>(stride), k = static_cast<long>(kx);
    long first = p - k <= 0 ? 0 : (p - k + s - 1) / s;
    long last = (static_cast<long>(w) - 1 + p - k);
    long end = last < 0 ? 0 : last / s + 1;
    lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(ow)));
    hi = static_cast<std::size_t>(std::clamp<long>(end, static_cast<long>(lo), static_cast<long>(ow)));
  }
  // Input coordinate along an axis, or -1 if it falls in the padding.
  long in_coord(std::size_t o, std::size_t k, std::size_t extent) const {
    long v = static_cast<long>(o * stride + k) - static_cast<long>(pad);
    return (v < 0 || v >= static_cast<long>(extent)) ? -1 : v;
  }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& wt, std::size_t stride, std::size_t padding,
                           std::size_t groups) {
  if (x.ndim() != 5) throw DimensionError("conv3d: input must be [B, C, D, H, W], got " + shape_str(x.shape()));
  if (wt.ndim() != 5) throw DimensionError("conv3d: kernel must be [Cout, Cin/g, kd, kh, kw]");
  if (stride < 1) throw DimensionError("conv3d: stride must be >= 1");
  if (groups < 1) throw DimensionError("conv3d: groups must be >= 1");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.d = x.dim(2);
  g.h = x.dim(3);
  g.w = x.dim(4);
  g.cout = wt.dim(0);
  g.cin_g = wt.dim(1);
  g.kd = wt.dim(2);
  g.kh = wt.dim(3);
  g.kw = wt.dim(4);
  g.stride = stride;
  g.pad = padding;
  g.groups = groups;
  if (g.cin % groups != 0 || g.cout % groups != 0 || g.cin / groups != g.cin_g) {
    throw DimensionError("conv3d: channel counts incompatible with groups (input " + shape_str(x.shape()) +
                         ", kernel " + shape_str(wt.shape()) + ")");
  }
  if (g.kd > g.d + 2 * padding || g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw DimensionError("conv3d: kernel " + shape_str(wt.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  g.od = (g.d + 2 * padding - g.kd) / stride + 1;
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  return g;
}

void conv_forward(const ConvGeometry& g, const double* x, const double* wt, double* out) {
  parallel_for(g.batch * g.cout, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t job = b0; job < b1; ++job) {
      std::size_t n = job / g.cout, oc = job % g.cout;
      std::size_t grp = oc / g.cout_g();
      double* o = out + job * g.out_vol();
      for (std::size_t icg = 0; icg < g.cin_g; ++icg) {
        const double* in = x + (n * g.cin + grp * g.cin_g + icg) * g.in_vol();
        const double* kern = wt + (oc * g.cin_g + icg) * g.kd * g.kh * g.kw;
        for (std::size_t kz = 0; kz < g.kd; ++kz)
          for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              double wv = kern[(kz * g.kh + ky) * g.kw + kx];
              std::size_t lo, hi;
              g.ow_range(kx, lo, hi);
              if (lo >= hi) continue;
              for (std::size_t oz = 0; oz < g.od; ++oz) {
                long iz = g.in_coord(oz, kz, g.d);
                if (iz < 0) continue;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                  long iy = g.in_coord(oy, ky, g.h);
                  if (iy < 0) continue;
                  const double* irow = in + (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w;
                  double* orow = o + (oz * g.oh + oy) * g.ow;
                  if (g.stride == 1) {
                    const double* src = irow + kx - g.pad;
                    for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
                  } else {
                    for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                  }
                }
              }
            }
      }
    }
  });
}

void conv_backward_input(const ConvGeometry& g, const double* gout, const double* wt, double* gx) {
  parallel_for(g.batch * g.cin, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t job = b0; job < b1; ++job) {
      std::size_t n = job / g.cin, ic = job % g.cin;
      std::size_t grp = ic / g.cin_g, icg = ic % g.cin_g;
      double* gin = gx + job * g.in_vol();
      for (std::size_t ocg = 0; ocg < g.cout_g(); ++ocg) {
        std::size_t oc = grp * g.cout_g() + ocg;
        const double* up = gout + (n * g.cout + oc) * g.out_vol();
        const double* kern = wt + (oc * g.cin_g + icg) * g.kd * g.kh * g.kw;
        for (std::size_t kz = 0; kz < g.kd; ++kz)
          for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              double wv = kern[(kz * g.kh + ky) * g.kw + kx];
              std::size_t lo, hi;
              g.ow_range(kx, lo, hi);
              if (lo >= hi) continue;
              for (std::size_t oz = 0; oz < g.od; ++oz) {
                long iz = g.in_coord(oz, kz, g.d);
                if (iz < 0) continue;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                  long iy = g.in_coord(oy, ky, g.h);
                  if (iy < 0) continue;
                  double* irow = gin + (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w;
                  const double* urow = up + (oz * g.oh + oy) * g.ow;
                  if (g.stride == 1) {
                    double* dst = irow + kx - g.pad;
                    for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += wv * urow[ox];
                  } else {
                    for (std::size_t ox = lo; ox < hi; ++ox) irow[ox * g.stride + kx - g.pad] += wv * urow[ox];
                  }
                }
              }
            }
      }
    }
  });
}

void conv_backward_weight(const ConvGeometry& g, const double* gout, const double* x, double* gw) {
  parallel_for(g.cout, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t oc = c0; oc < c1; ++oc) {
      std::size_t grp = oc / g.cout_g();
      for (std::size_t icg = 0; icg < g.cin_g; ++icg) {
        double* kern = gw + (oc * g.cin_g + icg) * g.kd * g.kh * g.kw;
        for (std::size_t kz = 0; kz < g.kd; ++kz)
          for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              std::size_t lo, hi;
              g.ow_range(kx, lo, hi);
              if (lo >= hi) continue;
              double acc = 0.0;
              for (std::size_t n = 0; n < g.batch; ++n) {
                const double* in = x + (n * g.cin + grp * g.cin_g + icg) * g.in_vol();
                const double* up = gout + (n * g.cout + oc) * g.out_vol();
                for (std::size_t oz = 0; oz < g.od; ++oz) {
                  long iz = g.in_coord(oz, kz, g.d);
                  if (iz < 0) continue;
                  for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    long iy = g.in_coord(oy, ky, g.h);
                    if (iy < 0) continue;
                    const double* irow = in + (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* urow = up + (oz * g.oh + oy) * g.ow;
                    if (g.stride == 1) {
                      const double* src = irow + kx - g.pad;
                      for (std::size_t ox = lo; ox < hi; ++ox) acc += urow[ox] * src[ox];
                    } else {
                      for (std::size_t ox = lo; ox < hi; ++ox) acc += urow[ox] * irow[ox * g.stride + kx - g.pad];
                    }
                  }
                }
              }
              kern[(kz * g.kh + ky) * g.kw + kx] += acc;
            }
      }
    }
  });
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding, std::size_t groups) {
  ConvGeometry g = conv_geometry(x, w, stride, padding, groups);
  std::vector<double> out(g.batch * g.cout * g.out_vol(), 0.0);
  conv_forward(g, x.data().data(), w.data().data(), out.data());
  detail::count_macs(g.batch * g.cout * g.out_vol() * g.cin_g * g.kd * g.kh * g.kw);
  return make_result({g.batch, g.cout, g.od, g.oh, g.ow}, std::move(out), "conv3d", {x, w}, [g](Node& self) {
    const auto& xv = input_data(self, 0);
    const auto& wv = input_data(self, 1);
    if (double* gx = input_grad(self, 0)) conv_backward_input(g, self.grad.data(), wv.data(), gx);
    if (double* gw = input_grad(self, 1)) conv_backward_weight(g, self.grad.data(), xv.data(), gw);
  });
}

}  // namespace samamba
