#include <cmath>
#include <numbers>

#include "samamba/ops.hpp"

namespace samamba {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <class F, class DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), op, {x}, [df](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& xv = input_data(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * df(xv[i], self.data[i]);
  });
}

// Stable log(1 + exp(x)).
double softplus_value(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const auto& av = input_data(self, 0);
    const auto& bv = input_data(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / bd[i];
  return make_result(a.shape(), std::move(out), "div", {a, b}, [](Node& self) {
    const auto& bv = input_data(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / bv[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i] * self.data[i] / bv[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_gate(const Tensor& x, const Tensor& g) {
  if (g.size() != 1) throw DimensionError("mul_gate: gate must hold one value");
  double gv = g.data()[0];
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * gv;
  return make_result(x.shape(), std::move(out), "mul_gate", {x, g}, [](Node& self) {
    const auto& xv = input_data(self, 0);
    double gval = input_data(self, 1)[0];
    if (double* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * gval;
    }
    if (double* gg = input_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
      gg[0] += acc;
    }
  });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(x, "abs", [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * sigmoid_value(v); },
      [](double v, double) {
        double s = sigmoid_value(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", softplus_value, [](double v, double) { return sigmoid_value(v); });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({1}, {acc}, "sum_all", {x}, [](Node& self) {
    if (double* g = input_grad(self, 0)) {
      double up = self.grad[0];
      std::size_t n = self.inputs[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += up;
    }
  });
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("sum_axis: axis out of range");
  std::size_t outer = 1, inner = 1, n = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  auto xd = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * n + k) * inner + i];
  return make_result(os, std::move(out), "sum_axis", {x}, [outer, inner, n](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < inner; ++i) g[(o * n + k) * inner + i] += self.grad[o * inner + i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  std::size_t c = b.size();
  if (x.ndim() == 0 || x.shape().back() != c) {
    throw DimensionError("add_bias: last extent of " + shape_str(x.shape()) + " != " + std::to_string(c));
  }
  auto xd = x.data(), bd = b.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + bd[i % c];
  return make_result(x.shape(), std::move(out), "add_bias", {x, b}, [c](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
    }
  });
}

Tensor scale_cols(const Tensor& x, const Tensor& s) {
  std::size_t c = s.size();
  if (x.ndim() == 0 || x.shape().back() != c) throw DimensionError("scale_cols: last extent mismatch");
  auto xd = x.data(), sd = s.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sd[i % c];
  return make_result(x.shape(), std::move(out), "scale_cols", {x, s}, [c](Node& self) {
    const auto& xv = input_data(self, 0);
    const auto& sv = input_data(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += self.grad[i] * sv[i % c];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < xv.size(); ++i) g[i % c] += self.grad[i] * xv[i];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& m) {
  if (x.ndim() != 2 || m.size() != x.dim(0)) throw DimensionError("scale_rows: expects x[T,C], m[T]");
  std::size_t rows = x.dim(0), c = x.dim(1);
  auto xd = x.data(), md = m.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xd[r * c + j] * md[r];
  return make_result(x.shape(), std::move(out), "scale_rows", {x, m}, [rows, c](Node& self) {
    const auto& xv = input_data(self, 0);
    const auto& mv = input_data(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[r * c + j] * mv[r];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += self.grad[r * c + j] * xv[r * c + j];
        g[r] += acc;
      }
    }
  });
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  std::size_t c = v.size();
  if (!(v.ndim() == 1 || (v.ndim() == 2 && v.dim(0) == 1))) {
    throw DimensionError("broadcast_rows: expects [C] or [1,C]");
  }
  auto vd = v.data();
  std::vector<double> out(rows * c);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = vd[j];
  return make_result({rows, c}, std::move(out), "broadcast_rows", {v}, [rows, c](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.ndim() < 2 || x.dim(1) != b.size()) throw DimensionError("add_channel_bias: channel mismatch");
  std::size_t batch = x.dim(0), c = x.dim(1), sp = x.size() / (batch * c);
  auto xd = x.data(), bd = b.data();
  std::vector<double> out(xd.size());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = xd.data() + (n * c + ch) * sp;
      double* dst = out.data() + (n * c + ch) * sp;
      for (std::size_t i = 0; i < sp; ++i) dst[i] = src[i] + bd[ch];
    }
  return make_result(x.shape(), std::move(out), "add_channel_bias", {x, b}, [batch, c, sp](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          const double* up = self.grad.data() + (n * c + ch) * sp;
          for (std::size_t i = 0; i < sp; ++i) acc += up[i];
          g[ch] += acc;
        }
    }
  });
}

Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.ndim() < 2) throw DimensionError("channel_affine: expects [B, C, ...]");
  std::size_t batch = x.dim(0), c = x.dim(1), sp = x.size() / (batch * c);
  if (gamma.size() != batch * c || beta.size() != batch * c) {
    throw DimensionError("channel_affine: gamma/beta must hold B*C = " + std::to_string(batch * c) +
                         " values, got " + std::to_string(gamma.size()) + "/" + std::to_string(beta.size()));
  }
  auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  std::vector<double> out(xd.size());
  for (std::size_t nc = 0; nc < batch * c; ++nc) {
    const double* src = xd.data() + nc * sp;
    double* dst = out.data() + nc * sp;
    for (std::size_t i = 0; i < sp; ++i) dst[i] = gd[nc] * src[i] + bd[nc];
  }
  return make_result(x.shape(), std::move(out), "channel_affine", {x, gamma, beta}, [batch, c, sp](Node& self) {
    const auto& xv = input_data(self, 0);
    const auto& gv = input_data(self, 1);
    double* gx = input_grad(self, 0);
    double* gg = input_grad(self, 1);
    double* gb = input_grad(self, 2);
    for (std::size_t nc = 0; nc < batch * c; ++nc) {
      const double* up = self.grad.data() + nc * sp;
      const double* src = xv.data() + nc * sp;
      if (gx) {
        for (std::size_t i = 0; i < sp; ++i) gx[nc * sp + i] += up[i] * gv[nc];
      }
      if (gg) {
        double acc = 0.0;
        for (std::size_t i = 0; i < sp; ++i) acc += up[i] * src[i];
        gg[nc] += acc;
      }
      if (gb) {
        double acc = 0.0;
        for (std::size_t i = 0; i < sp; ++i) acc += up[i];
        gb[nc] += acc;
      }
    }
  });
}

}  // namespace samamba
